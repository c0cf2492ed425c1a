use super::{basic_conv, SegmentModule};
use crate::models::layers::{BoxLayer, Branches, Pool, Seq};
use crate::models::params::{Builder, Segment};
use crate::Result;

const EPS: f64 = 1e-3;

struct Ctx<'b, 'a> {
    b: &'b mut Builder<'a>,
    module: String,
}

impl Ctx<'_, '_> {
    fn conv(&mut self, branch: &str, cin: usize, cout: usize, k: (usize, usize), s: usize, p: (usize, usize)) -> Result<BoxLayer> {
        let prefix = format!("{}.{branch}", self.module);
        basic_conv(self.b, &prefix, cin, cout, k, s, p, EPS)
    }

    fn k1(&mut self, branch: &str, cin: usize, cout: usize) -> Result<BoxLayer> {
        self.conv(branch, cin, cout, (1, 1), 1, (0, 0))
    }
}

fn seq(layers: Vec<BoxLayer>) -> BoxLayer {
    Box::new(Seq(layers))
}

fn inception_a(b: &mut Builder, name: &str, cin: usize, pool_features: usize) -> Result<(BoxLayer, usize)> {
    let mut c = Ctx { b, module: name.into() };
    let b1 = c.k1("branch1x1", cin, 64)?;
    let b5 = seq(vec![c.k1("branch5x5_1", cin, 48)?, c.conv("branch5x5_2", 48, 64, (5, 5), 1, (2, 2))?]);
    let b3 = seq(vec![
        c.k1("branch3x3dbl_1", cin, 64)?,
        c.conv("branch3x3dbl_2", 64, 96, (3, 3), 1, (1, 1))?,
        c.conv("branch3x3dbl_3", 96, 96, (3, 3), 1, (1, 1))?,
    ]);
    let bp = seq(vec![Box::new(Pool::avg(3, 1, 1)), c.k1("branch_pool", cin, pool_features)?]);
    Ok((Box::new(Branches(vec![b1, b5, b3, bp])), 64 + 64 + 96 + pool_features))
}

fn inception_b(b: &mut Builder, name: &str, cin: usize) -> Result<(BoxLayer, usize)> {
    let mut c = Ctx { b, module: name.into() };
    let b3 = c.conv("branch3x3", cin, 384, (3, 3), 2, (0, 0))?;
    let bd = seq(vec![
        c.k1("branch3x3dbl_1", cin, 64)?,
        c.conv("branch3x3dbl_2", 64, 96, (3, 3), 1, (1, 1))?,
        c.conv("branch3x3dbl_3", 96, 96, (3, 3), 2, (0, 0))?,
    ]);
    let bp: BoxLayer = Box::new(Pool::max(3, 2, 0));
    Ok((Box::new(Branches(vec![b3, bd, bp])), 384 + 96 + cin))
}

fn inception_c(b: &mut Builder, name: &str, cin: usize, c7: usize) -> Result<(BoxLayer, usize)> {
    let mut c = Ctx { b, module: name.into() };
    let (row, col) = (((1, 7), (0, 3)), ((7, 1), (3, 0)));
    let b1 = c.k1("branch1x1", cin, 192)?;
    let b7 = seq(vec![
        c.k1("branch7x7_1", cin, c7)?,
        c.conv("branch7x7_2", c7, c7, row.0, 1, row.1)?,
        c.conv("branch7x7_3", c7, 192, col.0, 1, col.1)?,
    ]);
    let bd = seq(vec![
        c.k1("branch7x7dbl_1", cin, c7)?,
        c.conv("branch7x7dbl_2", c7, c7, col.0, 1, col.1)?,
        c.conv("branch7x7dbl_3", c7, c7, row.0, 1, row.1)?,
        c.conv("branch7x7dbl_4", c7, c7, col.0, 1, col.1)?,
        c.conv("branch7x7dbl_5", c7, 192, row.0, 1, row.1)?,
    ]);
    let bp = seq(vec![Box::new(Pool::avg(3, 1, 1)), c.k1("branch_pool", cin, 192)?]);
    Ok((Box::new(Branches(vec![b1, b7, bd, bp])), 768))
}

fn inception_d(b: &mut Builder, name: &str, cin: usize) -> Result<(BoxLayer, usize)> {
    let mut c = Ctx { b, module: name.into() };
    let b3 = seq(vec![
        c.k1("branch3x3_1", cin, 192)?,
        c.conv("branch3x3_2", 192, 320, (3, 3), 2, (0, 0))?,
    ]);
    let b7 = seq(vec![
        c.k1("branch7x7x3_1", cin, 192)?,
        c.conv("branch7x7x3_2", 192, 192, (1, 7), 1, (0, 3))?,
        c.conv("branch7x7x3_3", 192, 192, (7, 1), 1, (3, 0))?,
        c.conv("branch7x7x3_4", 192, 192, (3, 3), 2, (0, 0))?,
    ]);
    let bp: BoxLayer = Box::new(Pool::max(3, 2, 0));
    Ok((Box::new(Branches(vec![b3, b7, bp])), 320 + 192 + cin))
}

fn inception_e(b: &mut Builder, name: &str, cin: usize) -> Result<(BoxLayer, usize)> {
    let mut c = Ctx { b, module: name.into() };
    let b1 = c.k1("branch1x1", cin, 320)?;
    let b3 = seq(vec![
        c.k1("branch3x3_1", cin, 384)?,
        Box::new(Branches(vec![
            c.conv("branch3x3_2a", 384, 384, (1, 3), 1, (0, 1))?,
            c.conv("branch3x3_2b", 384, 384, (3, 1), 1, (1, 0))?,
        ])),
    ]);
    let bd = seq(vec![
        c.k1("branch3x3dbl_1", cin, 448)?,
        c.conv("branch3x3dbl_2", 448, 384, (3, 3), 1, (1, 1))?,
        Box::new(Branches(vec![
            c.conv("branch3x3dbl_3a", 384, 384, (1, 3), 1, (0, 1))?,
            c.conv("branch3x3dbl_3b", 384, 384, (3, 1), 1, (1, 0))?,
        ])),
    ]);
    let bp = seq(vec![Box::new(Pool::avg(3, 1, 1)), c.k1("branch_pool", cin, 192)?]);
    Ok((Box::new(Branches(vec![b1, b3, bd, bp])), 2048))
}

type ModuleFn = fn(&mut Builder, &str, usize) -> Result<(BoxLayer, usize)>;

/// Segments split at the grid reductions: stem = Conv2d_1a..2b + pool,
/// block1 = Conv2d_3b..4a + pool, block2 = Mixed_5b..5d,
/// block3 = Mixed_6a..6e, block4 = Mixed_7a..7c. The auxiliary classifier
/// is not part of the model.
pub(super) fn build(b: &mut Builder) -> Result<Vec<SegmentModule>> {
    b.segment = Segment::Stem;
    let stem = seq(vec![
        basic_conv(b, "Conv2d_1a_3x3", 3, 32, (3, 3), 2, (0, 0), EPS)?,
        basic_conv(b, "Conv2d_2a_3x3", 32, 32, (3, 3), 1, (0, 0), EPS)?,
        basic_conv(b, "Conv2d_2b_3x3", 32, 64, (3, 3), 1, (1, 1), EPS)?,
        Box::new(Pool::max(3, 2, 0)),
    ]);
    b.segment = Segment::Block1;
    let block1 = seq(vec![
        basic_conv(b, "Conv2d_3b_1x1", 64, 80, (1, 1), 1, (0, 0), EPS)?,
        basic_conv(b, "Conv2d_4a_3x3", 80, 192, (3, 3), 1, (0, 0), EPS)?,
        Box::new(Pool::max(3, 2, 0)),
    ]);
    let mut out = vec![
        SegmentModule { segment: Segment::Stem, body: stem, out_channels: 64 },
        SegmentModule { segment: Segment::Block1, body: block1, out_channels: 192 },
    ];

    let a = |pf: usize| move |b: &mut Builder, n: &str, c: usize| inception_a(b, n, c, pf);
    let cc = |c7: usize| move |b: &mut Builder, n: &str, c: usize| inception_c(b, n, c, c7);
    let groups: [(Segment, Vec<(&str, Box<dyn Fn(&mut Builder, &str, usize) -> Result<(BoxLayer, usize)>>)>); 3] = [
        (
            Segment::Block2,
            vec![("Mixed_5b", Box::new(a(32))), ("Mixed_5c", Box::new(a(64))), ("Mixed_5d", Box::new(a(64)))],
        ),
        (
            Segment::Block3,
            vec![
                ("Mixed_6a", Box::new(inception_b as ModuleFn)),
                ("Mixed_6b", Box::new(cc(128))),
                ("Mixed_6c", Box::new(cc(160))),
                ("Mixed_6d", Box::new(cc(160))),
                ("Mixed_6e", Box::new(cc(192))),
            ],
        ),
        (
            Segment::Block4,
            vec![
                ("Mixed_7a", Box::new(inception_d as ModuleFn)),
                ("Mixed_7b", Box::new(inception_e as ModuleFn)),
                ("Mixed_7c", Box::new(inception_e as ModuleFn)),
            ],
        ),
    ];
    let mut c = 192;
    for (seg, modules) in groups {
        b.segment = seg;
        let mut layers = Vec::with_capacity(modules.len());
        for (name, f) in modules {
            let (layer, cout) = f(b, name, c)?;
            layers.push(layer);
            c = cout;
        }
        out.push(SegmentModule { segment: seg, body: seq(layers), out_channels: c });
    }
    Ok(out)
}
