use super::SegmentModule;
use crate::models::layers::{BoxLayer, DenseConcat, Pool, Relu, Seq};
use crate::models::params::{Builder, Segment};
use crate::Result;

pub(super) const DENSENET201_BLOCKS: [usize; 4] = [6, 12, 48, 32];
const BN_SIZE: usize = 4;
const EPS: f64 = 1e-5;

fn dense_layer(b: &mut Builder, prefix: &str, cin: usize, growth: usize) -> Result<BoxLayer> {
    let n1 = b.batch_norm(&format!("{prefix}.norm1"), cin, EPS)?;
    let c1 = b.conv(&format!("{prefix}.conv1"), cin, BN_SIZE * growth, (1, 1), 1, (0, 0))?;
    let n2 = b.batch_norm(&format!("{prefix}.norm2"), BN_SIZE * growth, EPS)?;
    let c2 = b.conv(&format!("{prefix}.conv2"), BN_SIZE * growth, growth, (3, 3), 1, (1, 1))?;
    Ok(Box::new(DenseConcat(Box::new(Seq(vec![
        Box::new(n1),
        Box::new(Relu),
        Box::new(c1),
        Box::new(n2),
        Box::new(Relu),
        Box::new(c2),
    ])))))
}

/// Dense blocks map to block1..block4; each transition belongs to the block
/// before it, and the final norm + ReLU belong to block4.
pub(super) fn build(b: &mut Builder, growth: usize, blocks: [usize; 4], init_features: usize) -> Result<Vec<SegmentModule>> {
    b.segment = Segment::Stem;
    let conv0 = b.conv("features.conv0", 3, init_features, (7, 7), 2, (3, 3))?;
    let norm0 = b.batch_norm("features.norm0", init_features, EPS)?;
    let mut out = vec![SegmentModule {
        segment: Segment::Stem,
        body: Box::new(Seq(vec![
            Box::new(conv0),
            Box::new(norm0),
            Box::new(Relu),
            Box::new(Pool::max(3, 2, 1)),
        ])),
        out_channels: init_features,
    }];
    let mut c = init_features;
    for (i, &n_layers) in blocks.iter().enumerate() {
        let seg = Segment::FEATURES[i + 1];
        b.segment = seg;
        let mut layers: Vec<BoxLayer> = Vec::with_capacity(n_layers + 2);
        for j in 0..n_layers {
            let prefix = format!("features.denseblock{}.denselayer{}", i + 1, j + 1);
            layers.push(dense_layer(b, &prefix, c, growth)?);
            c += growth;
        }
        if i < 3 {
            let prefix = format!("features.transition{}", i + 1);
            let norm = b.batch_norm(&format!("{prefix}.norm"), c, EPS)?;
            let conv = b.conv(&format!("{prefix}.conv"), c, c / 2, (1, 1), 1, (0, 0))?;
            c /= 2;
            layers.push(Box::new(norm));
            layers.push(Box::new(Relu));
            layers.push(Box::new(conv));
            layers.push(Box::new(Pool::avg(2, 2, 0)));
        } else {
            layers.push(Box::new(b.batch_norm("features.norm5", c, EPS)?));
            layers.push(Box::new(Relu));
        }
        out.push(SegmentModule {
            segment: seg,
            body: Box::new(Seq(layers)),
            out_channels: c,
        });
    }
    Ok(out)
}
