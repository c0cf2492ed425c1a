use super::SegmentModule;
use crate::models::layers::{BoxLayer, Pool, Relu, Residual, Seq};
use crate::models::params::{Builder, Segment};
use crate::{Error, Result};

const EPS: f64 = 1e-5;

fn stage_sizes(depth: u32) -> Result<([usize; 4], bool)> {
    Ok(match depth {
        18 => ([2, 2, 2, 2], false),
        34 => ([3, 4, 6, 3], false),
        50 => ([3, 4, 6, 3], true),
        101 => ([3, 4, 23, 3], true),
        152 => ([3, 8, 36, 3], true),
        d => return Err(Error::Config(format!("unsupported ResNet depth {d}"))),
    })
}

fn unit(
    b: &mut Builder,
    prefix: &str,
    cin: usize,
    width: usize,
    stride: usize,
    bottleneck: bool,
) -> Result<(BoxLayer, usize)> {
    let expansion = if bottleneck { 4 } else { 1 };
    let cout = width * expansion;
    let mut body: Vec<BoxLayer> = Vec::new();
    if bottleneck {
        body.push(Box::new(b.conv(&format!("{prefix}.conv1"), cin, width, (1, 1), 1, (0, 0))?));
        body.push(Box::new(b.batch_norm(&format!("{prefix}.bn1"), width, EPS)?));
        body.push(Box::new(Relu));
        body.push(Box::new(b.conv(&format!("{prefix}.conv2"), width, width, (3, 3), stride, (1, 1))?));
        body.push(Box::new(b.batch_norm(&format!("{prefix}.bn2"), width, EPS)?));
        body.push(Box::new(Relu));
        body.push(Box::new(b.conv(&format!("{prefix}.conv3"), width, cout, (1, 1), 1, (0, 0))?));
        body.push(Box::new(b.batch_norm(&format!("{prefix}.bn3"), cout, EPS)?));
    } else {
        body.push(Box::new(b.conv(&format!("{prefix}.conv1"), cin, width, (3, 3), stride, (1, 1))?));
        body.push(Box::new(b.batch_norm(&format!("{prefix}.bn1"), width, EPS)?));
        body.push(Box::new(Relu));
        body.push(Box::new(b.conv(&format!("{prefix}.conv2"), width, width, (3, 3), 1, (1, 1))?));
        body.push(Box::new(b.batch_norm(&format!("{prefix}.bn2"), width, EPS)?));
    }
    let shortcut: Option<BoxLayer> = if stride != 1 || cin != cout {
        let conv = b.conv(&format!("{prefix}.downsample.0"), cin, cout, (1, 1), stride, (0, 0))?;
        let bn = b.batch_norm(&format!("{prefix}.downsample.1"), cout, EPS)?;
        Some(Box::new(Seq(vec![Box::new(conv), Box::new(bn)])))
    } else {
        None
    };
    Ok((
        Box::new(Residual {
            body: Box::new(Seq(body)),
            shortcut,
        }),
        cout,
    ))
}

/// Residual stages layer1..layer4 map to block1..block4.
pub(super) fn build(b: &mut Builder, depth: u32) -> Result<Vec<SegmentModule>> {
    let (sizes, bottleneck) = stage_sizes(depth)?;
    b.segment = Segment::Stem;
    let conv1 = b.conv("conv1", 3, 64, (7, 7), 2, (3, 3))?;
    let bn1 = b.batch_norm("bn1", 64, EPS)?;
    let mut out = vec![SegmentModule {
        segment: Segment::Stem,
        body: Box::new(Seq(vec![
            Box::new(conv1),
            Box::new(bn1),
            Box::new(Relu),
            Box::new(Pool::max(3, 2, 1)),
        ])),
        out_channels: 64,
    }];
    let mut c = 64;
    for (i, &n) in sizes.iter().enumerate() {
        let seg = Segment::FEATURES[i + 1];
        b.segment = seg;
        let width = 64 << i;
        let mut units = Vec::with_capacity(n);
        for j in 0..n {
            let stride = if i > 0 && j == 0 { 2 } else { 1 };
            let (u, cout) = unit(b, &format!("layer{}.{j}", i + 1), c, width, stride, bottleneck)?;
            units.push(u);
            c = cout;
        }
        out.push(SegmentModule {
            segment: seg,
            body: Box::new(Seq(units)),
            out_channels: c,
        });
    }
    Ok(out)
}
