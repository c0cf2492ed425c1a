use super::SegmentModule;
use crate::models::layers::{BoxLayer, Layer, Pool, Relu, Seq};
use crate::models::params::{Builder, Segment};
use crate::Result;

pub(super) const STEM_CHANNELS: usize = 8;
pub(super) const BLOCK_CHANNELS: [usize; 4] = [16, 32, 64, 128];

fn conv_bn_relu(b: &mut Builder, block: &str, i: usize, cin: usize, cout: usize, stride: usize) -> Result<Vec<BoxLayer>> {
    let conv = b.conv(&format!("{block}.conv{i}"), cin, cout, (3, 3), stride, (1, 1))?;
    let bn = b.batch_norm(&format!("{block}.bn{i}"), cout, 1e-5)?;
    Ok(vec![Box::new(conv), Box::new(bn), Box::new(Relu)])
}

/// Stem: strided 3x3 conv + 2x2 max pool. Blocks 1-3: two 3x3 convs then a
/// 2x2 max pool. Block 4: two 3x3 convs.
pub(super) fn build(b: &mut Builder) -> Result<Vec<SegmentModule>> {
    b.segment = Segment::Stem;
    let mut stem = Vec::new();
    let conv = b.conv("stem.conv", 3, STEM_CHANNELS, (3, 3), 2, (1, 1))?;
    let bn = b.batch_norm("stem.bn", STEM_CHANNELS, 1e-5)?;
    stem.push(Box::new(conv) as BoxLayer);
    stem.push(Box::new(bn));
    stem.push(Box::new(Relu));
    stem.push(Box::new(Pool::max(2, 2, 0)));
    let mut out = vec![SegmentModule {
        segment: Segment::Stem,
        body: Box::new(Seq(stem)),
        out_channels: STEM_CHANNELS,
    }];
    let mut cin = STEM_CHANNELS;
    for (k, &c) in BLOCK_CHANNELS.iter().enumerate() {
        let seg = Segment::FEATURES[k + 1];
        b.segment = seg;
        let name = seg.name();
        let mut layers = conv_bn_relu(b, name, 1, cin, c, 1)?;
        layers.extend(conv_bn_relu(b, name, 2, c, c, 1)?);
        if k < 3 {
            layers.push(Box::new(Pool::max(2, 2, 0)) as Box<dyn Layer>);
        }
        out.push(SegmentModule {
            segment: seg,
            body: Box::new(Seq(layers)),
            out_channels: c,
        });
        cin = c;
    }
    Ok(out)
}
