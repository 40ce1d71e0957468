//! The noise-prediction network: 3D-conv intro, a two-level NAFNet-style
//! encoder/decoder operating per frame, and a 3D-conv ending layer.

use super::ops::*;
use super::{DenoiserConfig, Grads, ModelWeights};
use crate::tensor::{Feat, Scalar};

#[derive(Clone, Copy, Debug)]
pub(crate) enum Init {
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
    Const(f64),
}

#[derive(Clone, Debug)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    pub last_layer: bool,
}

#[derive(Clone, Copy, Debug)]
struct LinearIds {
    w: usize,
    b: Option<usize>,
    cout: usize,
}

#[derive(Clone, Copy, Debug)]
struct NormIds {
    g: usize,
    b: usize,
}

#[derive(Clone, Debug)]
struct BlockIds {
    c: usize,
    norm1: NormIds,
    time1: LinearIds,
    time2: LinearIds,
    conv1: LinearIds,
    dw_w: usize,
    dw_b: usize,
    sca: LinearIds,
    conv3: LinearIds,
    beta: usize,
    norm2: NormIds,
    conv4: LinearIds,
    conv5: LinearIds,
    gamma: usize,
}

#[derive(Clone, Copy, Debug)]
struct Conv3dIds {
    w: usize,
    b: usize,
    cout: usize,
}

#[derive(Default)]
struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, init, last_layer: false });
        self.specs.len() - 1
    }

    fn linear(&mut self, prefix: &str, cin: usize, cout: usize, bias: bool) -> LinearIds {
        let bound = 1.0 / (cin as f64).sqrt();
        let w = self.add(format!("{prefix}.weight"), vec![cin, cout], Init::Uniform(bound));
        let b = bias.then(|| self.add(format!("{prefix}.bias"), vec![cout], Init::Uniform(bound)));
        LinearIds { w, b, cout }
    }

    fn norm(&mut self, prefix: &str, c: usize) -> NormIds {
        NormIds {
            g: self.add(format!("{prefix}.weight"), vec![c], Init::Const(1.0)),
            b: self.add(format!("{prefix}.bias"), vec![c], Init::Const(0.0)),
        }
    }

    fn conv3d(&mut self, prefix: &str, cin: usize, cout: usize) -> Conv3dIds {
        let bound = 1.0 / ((27 * cin) as f64).sqrt();
        Conv3dIds {
            w: self.add(format!("{prefix}.weight"), vec![3, 3, 3, cin, cout], Init::Uniform(bound)),
            b: self.add(format!("{prefix}.bias"), vec![cout], Init::Uniform(bound)),
            cout,
        }
    }

    fn block(&mut self, prefix: &str, c: usize, temb: usize) -> BlockIds {
        let norm1 = self.norm(&format!("{prefix}.norm1"), c);
        let time1 = self.linear(&format!("{prefix}.time_mlp.0"), temb, 2 * c, true);
        let time2 = self.linear(&format!("{prefix}.time_mlp.2"), c, c, true);
        let conv1 = self.linear(&format!("{prefix}.conv1"), c, 2 * c, true);
        let dw_bound = 1.0 / 3.0;
        let dw_w = self.add(format!("{prefix}.conv2.weight"), vec![3, 3, 2 * c], Init::Uniform(dw_bound));
        let dw_b = self.add(format!("{prefix}.conv2.bias"), vec![2 * c], Init::Uniform(dw_bound));
        let sca = self.linear(&format!("{prefix}.sca"), c, c, true);
        let conv3 = self.linear(&format!("{prefix}.conv3"), c, c, true);
        let beta = self.add(format!("{prefix}.beta"), vec![c], Init::Const(0.0));
        let norm2 = self.norm(&format!("{prefix}.norm2"), c);
        let conv4 = self.linear(&format!("{prefix}.conv4"), c, 2 * c, true);
        let conv5 = self.linear(&format!("{prefix}.conv5"), c, c, true);
        let gamma = self.add(format!("{prefix}.gamma"), vec![c], Init::Const(0.0));
        BlockIds { c, norm1, time1, time2, conv1, dw_w, dw_b, sca, conv3, beta, norm2, conv4, conv5, gamma }
    }
}

pub(crate) struct Arch {
    pub specs: Vec<ParamSpec>,
    intro: Conv3dIds,
    enc: Vec<(Vec<BlockIds>, LinearIds)>,
    middle: Vec<BlockIds>,
    dec: Vec<(LinearIds, Vec<BlockIds>)>,
    ending: Conv3dIds,
    time_dim: usize,
}

pub(crate) const LEVELS: usize = 2;

impl Arch {
    pub fn new(cfg: &DenoiserConfig) -> Arch {
        let mut b = Builder::default();
        let (per_level, n_middle) = cfg.block_layout();
        let td = cfg.time_embed_dim;
        let intro = b.conv3d("intro", 2 * cfg.in_channels, cfg.width);
        let mut c = cfg.width;
        let mut enc = Vec::new();
        for l in 0..LEVELS {
            let blocks = (0..per_level).map(|i| b.block(&format!("enc{l}.block{i}"), c, td)).collect();
            let down = b.linear(&format!("down{l}"), 4 * c, 2 * c, true);
            enc.push((blocks, down));
            c *= 2;
        }
        let middle = (0..n_middle).map(|i| b.block(&format!("middle.block{i}"), c, td)).collect();
        let mut dec = Vec::new();
        for l in (0..LEVELS).rev() {
            let up = b.linear(&format!("up{l}"), c, 2 * c, false);
            c /= 2;
            let blocks = (0..per_level).map(|i| b.block(&format!("dec{l}.block{i}"), c, td)).collect();
            dec.push((up, blocks));
        }
        let ending = b.conv3d("ending", cfg.width, cfg.in_channels);
        for id in [ending.w, ending.b] {
            b.specs[id].last_layer = true;
        }
        Arch { specs: b.specs, intro, enc, middle, dec, ending, time_dim: td }
    }
}

struct BlockCache<T> {
    norm1: LnCache<T>,
    e1: Feat<T>,
    e2: Feat<T>,
    y2: Feat<T>,
    y3: Feat<T>,
    y4: Feat<T>,
    y5: Feat<T>,
    sca: ScaCache<T>,
    y6: Feat<T>,
    y7: Feat<T>,
    norm2: LnCache<T>,
    z1: Feat<T>,
    z2: Feat<T>,
    z3: Feat<T>,
    z4: Feat<T>,
}

/// Activations recorded by a forward pass, consumed by `backward`.
pub struct Tape<T> {
    frames: usize,
    temb: Feat<T>,
    intro_col: Vec<T>,
    intro_shape: (usize, usize, usize, usize),
    blocks: Vec<BlockCache<T>>,
    downs: Vec<Feat<T>>,
    ups: Vec<Feat<T>>,
    ending_col: Vec<T>,
    ending_shape: (usize, usize, usize, usize),
}

fn split2<T>(v: &mut [Vec<T>], a: usize, b: usize) -> (&mut [T], &mut [T]) {
    assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

struct Run<'a, T> {
    w: &'a ModelWeights<T>,
    frames: usize,
}

impl<'a, T: Scalar> Run<'a, T> {
    fn p(&self, id: usize) -> &'a [T] {
        &self.w.params[id].data
    }

    fn linear(&self, ids: LinearIds, x: &Feat<T>) -> Feat<T> {
        linear_fwd(x, self.p(ids.w), ids.b.map(|b| self.p(b)), ids.cout)
    }

    fn linear_back(&self, ids: LinearIds, x: &Feat<T>, dy: &Feat<T>, g: &mut Grads<T>, need_dx: bool) -> Option<Feat<T>> {
        match ids.b {
            Some(b) => {
                let (dw, db) = split2(&mut g.tensors, ids.w, b);
                linear_bwd(x, self.p(ids.w), dy, dw, Some(db), need_dx)
            }
            None => linear_bwd(x, self.p(ids.w), dy, &mut g.tensors[ids.w], None, need_dx),
        }
    }

    fn block(&self, ids: &BlockIds, x: Feat<T>, temb: &Feat<T>) -> (Feat<T>, BlockCache<T>) {
        let (y1, norm1) = layernorm_fwd(&x, self.p(ids.norm1.g), self.p(ids.norm1.b));
        let e1 = self.linear(ids.time1, temb);
        let e2 = simple_gate_fwd(&e1);
        let e3 = self.linear(ids.time2, &e2);
        let y2 = add_clip_vector_fwd(&y1, &e3.data, self.frames);
        let y3 = self.linear(ids.conv1, &y2);
        let y4 = dwconv_fwd(&y3, self.p(ids.dw_w), self.p(ids.dw_b));
        let y5 = simple_gate_fwd(&y4);
        let (y6, sca) = sca_fwd(&y5, self.p(ids.sca.w), self.p(ids.sca.b.unwrap()));
        let y7 = self.linear(ids.conv3, &y6);
        let x2 = scaled_residual_fwd(&x, &y7, self.p(ids.beta));
        let (z1, norm2) = layernorm_fwd(&x2, self.p(ids.norm2.g), self.p(ids.norm2.b));
        let z2 = self.linear(ids.conv4, &z1);
        let z3 = simple_gate_fwd(&z2);
        let z4 = self.linear(ids.conv5, &z3);
        let out = scaled_residual_fwd(&x2, &z4, self.p(ids.gamma));
        let cache = BlockCache { norm1, e1, e2, y2, y3, y4, y5, sca, y6, y7, norm2, z1, z2, z3, z4 };
        (out, cache)
    }

    fn block_back(&self, ids: &BlockIds, c: &BlockCache<T>, dout: Feat<T>, temb: &Feat<T>, g: &mut Grads<T>) -> Feat<T> {
        let dz4 = scaled_residual_bwd(&c.z4, self.p(ids.gamma), &dout, &mut g.tensors[ids.gamma]);
        let mut dx2 = dout;
        let dz3 = self.linear_back(ids.conv5, &c.z3, &dz4, g, true).unwrap();
        let dz2 = simple_gate_bwd(&c.z2, &dz3);
        let dz1 = self.linear_back(ids.conv4, &c.z1, &dz2, g, true).unwrap();
        {
            let (dg, db) = split2(&mut g.tensors, ids.norm2.g, ids.norm2.b);
            dx2.add_assign(&layernorm_bwd(&c.norm2, self.p(ids.norm2.g), &dz1, dg, db));
        }
        let dy7 = scaled_residual_bwd(&c.y7, self.p(ids.beta), &dx2, &mut g.tensors[ids.beta]);
        let mut dx = dx2;
        let dy6 = self.linear_back(ids.conv3, &c.y6, &dy7, g, true).unwrap();
        let dy5 = {
            let sb = ids.sca.b.unwrap();
            let (dw, db) = split2(&mut g.tensors, ids.sca.w, sb);
            sca_bwd(&c.y5, &c.sca, self.p(ids.sca.w), &dy6, dw, db)
        };
        let dy4 = simple_gate_bwd(&c.y4, &dy5);
        let dy3 = {
            let (dw, db) = split2(&mut g.tensors, ids.dw_w, ids.dw_b);
            dwconv_bwd(&c.y3, self.p(ids.dw_w), &dy4, dw, db)
        };
        let dy2 = self.linear_back(ids.conv1, &c.y2, &dy3, g, true).unwrap();
        let de3_data = add_clip_vector_bwd(&dy2, self.frames);
        let de3 = Feat { n: temb.n, h: 1, w: 1, c: ids.c, data: de3_data };
        let de2 = self.linear_back(ids.time2, &c.e2, &de3, g, true).unwrap();
        let de1 = simple_gate_bwd(&c.e1, &de2);
        self.linear_back(ids.time1, temb, &de1, g, false);
        let (dg, db) = split2(&mut g.tensors, ids.norm1.g, ids.norm1.b);
        dx.add_assign(&layernorm_bwd(&c.norm1, self.p(ids.norm1.g), &dy2, dg, db));
        dx
    }
}

impl Arch {
    /// `input` is `[clips * frames, h, w, 2C]` (noisy channels first, then
    /// condition channels); `temb` holds one sinusoidal embedding per clip.
    pub fn forward<T: Scalar>(&self, w: &ModelWeights<T>, input: &Feat<T>, temb: Feat<T>, frames: usize) -> (Feat<T>, Tape<T>) {
        debug_assert_eq!(temb.c, self.time_dim);
        let run = Run { w, frames };
        let intro_shape = (input.n, input.h, input.w, input.c);
        let (mut h, intro_col) =
            conv3d_fwd(input, frames, run.p(self.intro.w), run.p(self.intro.b), self.intro.cout);
        let mut blocks = Vec::new();
        let mut downs = Vec::new();
        let mut skips = Vec::new();
        for (level_blocks, down) in &self.enc {
            for ids in level_blocks {
                let (out, cache) = run.block(ids, h, &temb);
                blocks.push(cache);
                h = out;
            }
            let s2d = space_to_depth(&h);
            skips.push(h);
            h = run.linear(*down, &s2d);
            downs.push(s2d);
        }
        for ids in &self.middle {
            let (out, cache) = run.block(ids, h, &temb);
            blocks.push(cache);
            h = out;
        }
        let mut ups = Vec::new();
        for (up, level_blocks) in &self.dec {
            let expanded = run.linear(*up, &h);
            ups.push(h);
            h = pixel_shuffle(&expanded);
            h.add_assign(&skips.pop().expect("one skip per level"));
            for ids in level_blocks {
                let (out, cache) = run.block(ids, h, &temb);
                blocks.push(cache);
                h = out;
            }
        }
        let ending_shape = (h.n, h.h, h.w, h.c);
        let (out, ending_col) = conv3d_fwd(&h, frames, run.p(self.ending.w), run.p(self.ending.b), self.ending.cout);
        let tape = Tape { frames, temb, intro_col, intro_shape, blocks, downs, ups, ending_col, ending_shape };
        (out, tape)
    }

    pub fn backward<T: Scalar>(&self, w: &ModelWeights<T>, tape: Tape<T>, dout: &Feat<T>) -> Grads<T> {
        let mut g = Grads::zeros_like(w);
        let run = Run { w, frames: tape.frames };
        let Tape { temb, intro_col, intro_shape, mut blocks, mut downs, mut ups, ending_col, ending_shape, .. } = tape;

        let mut dh = {
            let (dw, db) = split2(&mut g.tensors, self.ending.w, self.ending.b);
            conv3d_bwd(&ending_col, ending_shape, run.frames, run.p(self.ending.w), dout, dw, db, true).unwrap()
        };
        let mut dskips = Vec::new();
        for (up, level_blocks) in self.dec.iter().rev() {
            for ids in level_blocks.iter().rev() {
                let cache = blocks.pop().unwrap();
                dh = run.block_back(ids, &cache, dh, &temb, &mut g);
            }
            dskips.push(dh.clone());
            let dexp = pixel_unshuffle(&dh);
            let up_in = ups.pop().unwrap();
            dh = run.linear_back(*up, &up_in, &dexp, &mut g, true).unwrap();
        }
        for ids in self.middle.iter().rev() {
            let cache = blocks.pop().unwrap();
            dh = run.block_back(ids, &cache, dh, &temb, &mut g);
        }
        // dskips runs shallowest-first; the encoder is unwound deepest-first
        for ((level_blocks, down), dskip) in self.enc.iter().rev().zip(dskips.into_iter().rev()) {
            let s2d = downs.pop().unwrap();
            let ds2d = run.linear_back(*down, &s2d, &dh, &mut g, true).unwrap();
            dh = depth_to_space(&ds2d);
            dh.add_assign(&dskip);
            for ids in level_blocks.iter().rev() {
                let cache = blocks.pop().unwrap();
                dh = run.block_back(ids, &cache, dh, &temb, &mut g);
            }
        }
        let (dw, db) = split2(&mut g.tensors, self.intro.w, self.intro.b);
        conv3d_bwd(&intro_col, intro_shape, run.frames, run.p(self.intro.w), &dh, dw, db, false);
        g
    }
}
