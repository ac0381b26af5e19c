//! Runtime layers with explicit forward caches and backward passes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::arch::{conv_axis, Padding, LEAKY_SLOPE};
use super::tensor::{gemm, Strides, Tensor};

/// Batched activation.
#[derive(Debug, Clone)]
pub(crate) enum Act {
    /// `[C, B, T, W]`
    Map {
        c: usize,
        b: usize,
        t: usize,
        w: usize,
        data: Vec<f64>,
    },
    /// `[T, B, F]`
    Seq {
        t: usize,
        b: usize,
        f: usize,
        data: Vec<f64>,
    },
    /// `[B, F]`
    Flat { b: usize, f: usize, data: Vec<f64> },
}

impl Act {
    pub fn data(&self) -> &[f64] {
        match self {
            Act::Map { data, .. } | Act::Seq { data, .. } | Act::Flat { data, .. } => data,
        }
    }

    pub fn data_mut(&mut self) -> &mut Vec<f64> {
        match self {
            Act::Map { data, .. } | Act::Seq { data, .. } | Act::Flat { data, .. } => data,
        }
    }

    pub fn into_data(self) -> Vec<f64> {
        match self {
            Act::Map { data, .. } | Act::Seq { data, .. } | Act::Flat { data, .. } => data,
        }
    }

    /// Same layout, new buffer.
    fn with_data(&self, data: Vec<f64>) -> Act {
        match *self {
            Act::Map { c, b, t, w, .. } => Act::Map { c, b, t, w, data },
            Act::Seq { t, b, f, .. } => Act::Seq { t, b, f, data },
            Act::Flat { b, f, .. } => Act::Flat { b, f, data },
        }
    }

    fn map_dims(&self) -> (usize, usize, usize, usize) {
        match *self {
            Act::Map { c, b, t, w, .. } => (c, b, t, w),
            _ => unreachable!("layer expects a feature map"),
        }
    }
}

/// Forward-pass state shared by all layers of one call.
pub(crate) struct Ctx {
    /// Present only in training mode; drives dropout masks.
    pub rng: Option<ChaCha8Rng>,
}

#[derive(Debug, Clone)]
pub(crate) struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: Padding,
    pub weight: usize,
    pub bias: usize,
}

struct Geo {
    t: usize,
    w: usize,
    to: usize,
    wo: usize,
    pt: usize,
    pw: usize,
}

impl Conv {
    fn geo(&self, t: usize, w: usize) -> Geo {
        let (to, pt, _) = conv_axis(t, self.kernel.0, self.stride.0, self.padding).expect("shape-checked");
        let (wo, pw, _) = conv_axis(w, self.kernel.1, self.stride.1, self.padding).expect("shape-checked");
        Geo { t, w, to, wo, pt, pw }
    }

    fn k(&self) -> usize {
        self.cin * self.kernel.0 * self.kernel.1
    }

    /// Unfolds sample `b` of `x` into a `[K, To·Wo]` column matrix.
    fn im2col(&self, x: &[f64], nb: usize, b: usize, g: &Geo, cols: &mut [f64]) {
        let (kh, kw) = self.kernel;
        let n = g.to * g.wo;
        for ci in 0..self.cin {
            let plane = &x[(ci * nb + b) * g.t * g.w..][..g.t * g.w];
            for i in 0..kh {
                for j in 0..kw {
                    let row = &mut cols[((ci * kh + i) * kw + j) * n..][..n];
                    for oy in 0..g.to {
                        let out = &mut row[oy * g.wo..][..g.wo];
                        let iy = (oy * self.stride.0 + i) as isize - g.pt as isize;
                        if iy < 0 || iy >= g.t as isize {
                            out.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * g.w..][..g.w];
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * self.stride.1 + j) as isize - g.pw as isize;
                            *o = if ix >= 0 && ix < g.w as isize {
                                src[ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], nb: usize, b: usize, g: &Geo, dx: &mut [f64]) {
        let (kh, kw) = self.kernel;
        let n = g.to * g.wo;
        for ci in 0..self.cin {
            let plane = &mut dx[(ci * nb + b) * g.t * g.w..][..g.t * g.w];
            for i in 0..kh {
                for j in 0..kw {
                    let row = &cols[((ci * kh + i) * kw + j) * n..][..n];
                    for oy in 0..g.to {
                        let iy = (oy * self.stride.0 + i) as isize - g.pt as isize;
                        if iy < 0 || iy >= g.t as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * g.w..][..g.w];
                        for ox in 0..g.wo {
                            let ix = (ox * self.stride.1 + j) as isize - g.pw as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[ix as usize] += row[oy * g.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, params: &[Tensor], x: &Act) -> Act {
        let (_, nb, t, w) = x.map_dims();
        let g = self.geo(t, w);
        let n = g.to * g.wo;
        let k = self.k();
        let wt = params[self.weight].data();
        let bias = params[self.bias].data();
        let mut out = vec![0.0; self.cout * nb * n];
        let mut cols = vec![0.0; k * n];
        for b in 0..nb {
            self.im2col(x.data(), nb, b, &g, &mut cols);
            gemm(
                self.cout,
                k,
                n,
                wt,
                Strides::rm(k),
                &cols,
                Strides::rm(n),
                0.0,
                &mut out[b * n..],
                Strides::rm(nb * n),
            );
        }
        for (co, block) in out.chunks_mut(nb * n).enumerate() {
            block.iter_mut().for_each(|v| *v += bias[co]);
        }
        Act::Map {
            c: self.cout,
            b: nb,
            t: g.to,
            w: g.wo,
            data: out,
        }
    }

    fn backward(
        &self,
        params: &[Tensor],
        x: &Act,
        dy: &[f64],
        grads: &mut [Tensor],
        need_dx: bool,
    ) -> Option<Act> {
        let (_, nb, t, w) = x.map_dims();
        let g = self.geo(t, w);
        let n = g.to * g.wo;
        let k = self.k();
        let wt = params[self.weight].data();
        let mut cols = vec![0.0; k * n];
        let mut dcols = vec![0.0; k * n];
        let mut dx = if need_dx {
            vec![0.0; x.data().len()]
        } else {
            Vec::new()
        };
        for b in 0..nb {
            self.im2col(x.data(), nb, b, &g, &mut cols);
            gemm(
                self.cout,
                n,
                k,
                &dy[b * n..],
                Strides::rm(nb * n),
                &cols,
                Strides::t(n),
                1.0,
                grads[self.weight].data_mut(),
                Strides::rm(k),
            );
            if need_dx {
                gemm(
                    k,
                    self.cout,
                    n,
                    wt,
                    Strides::t(k),
                    &dy[b * n..],
                    Strides::rm(nb * n),
                    0.0,
                    &mut dcols,
                    Strides::rm(n),
                );
                self.col2im(&dcols, nb, b, &g, &mut dx);
            }
        }
        let db = grads[self.bias].data_mut();
        for (co, block) in dy.chunks(nb * n).enumerate() {
            db[co] += block.iter().sum::<f64>();
        }
        need_dx.then(|| x.with_data(dx))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Lstm {
    pub input: usize,
    pub units: usize,
    /// `[I, 4H]`, gate blocks ordered i, f, g, o.
    pub wx: usize,
    /// `[H, 4H]`
    pub wh: usize,
    /// `[4H]`
    pub bias: usize,
}

pub(crate) struct LstmCache {
    x: Act,
    /// Activated gates per step, `[T·B, 4H]`.
    gates: Vec<f64>,
    /// Cell states, `[T·B, H]`.
    cells: Vec<f64>,
    /// Hidden states, `[T·B, H]`.
    hidden: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Lstm {
    fn forward(&self, params: &[Tensor], x: Act) -> (Act, LstmCache) {
        let Act::Seq { t, b, f, .. } = x else {
            unreachable!("LSTM expects a sequence")
        };
        debug_assert_eq!(f, self.input);
        let h = self.units;
        let g4 = 4 * h;
        let rows = t * b;
        let mut gates = vec![0.0; rows * g4];
        gemm(
            rows,
            f,
            g4,
            x.data(),
            Strides::rm(f),
            params[self.wx].data(),
            Strides::rm(g4),
            0.0,
            &mut gates,
            Strides::rm(g4),
        );
        let wh = params[self.wh].data();
        let bias = params[self.bias].data();
        let mut cells = vec![0.0; rows * h];
        let mut hidden = vec![0.0; rows * h];
        for step in 0..t {
            let z = &mut gates[step * b * g4..][..b * g4];
            if step > 0 {
                let prev = &hidden[(step - 1) * b * h..][..b * h];
                gemm(
                    b,
                    h,
                    g4,
                    prev,
                    Strides::rm(h),
                    wh,
                    Strides::rm(g4),
                    1.0,
                    z,
                    Strides::rm(g4),
                );
            }
            for bi in 0..b {
                let zr = &mut z[bi * g4..][..g4];
                for j in 0..h {
                    let i = sigmoid(zr[j] + bias[j]);
                    let fg = sigmoid(zr[h + j] + bias[h + j]);
                    let gg = (zr[2 * h + j] + bias[2 * h + j]).tanh();
                    let o = sigmoid(zr[3 * h + j] + bias[3 * h + j]);
                    zr[j] = i;
                    zr[h + j] = fg;
                    zr[2 * h + j] = gg;
                    zr[3 * h + j] = o;
                    let c_prev = if step > 0 {
                        cells[((step - 1) * b + bi) * h + j]
                    } else {
                        0.0
                    };
                    let c = fg * c_prev + i * gg;
                    cells[(step * b + bi) * h + j] = c;
                    hidden[(step * b + bi) * h + j] = o * c.tanh();
                }
            }
        }
        let out = hidden[(t - 1) * b * h..].to_vec();
        (
            Act::Flat { b, f: h, data: out },
            LstmCache {
                x,
                gates,
                cells,
                hidden,
            },
        )
    }

    fn backward(
        &self,
        params: &[Tensor],
        cache: &LstmCache,
        dy: &[f64],
        grads: &mut [Tensor],
        need_dx: bool,
    ) -> Option<Act> {
        let Act::Seq { t, b, f, .. } = cache.x else {
            unreachable!()
        };
        let h = self.units;
        let g4 = 4 * h;
        let wh = params[self.wh].data();
        let mut dz = vec![0.0; t * b * g4];
        let mut dh = dy.to_vec();
        let mut dc = vec![0.0; b * h];
        for step in (0..t).rev() {
            let dzs = &mut dz[step * b * g4..][..b * g4];
            for bi in 0..b {
                let gr = &cache.gates[(step * b + bi) * g4..][..g4];
                let dzr = &mut dzs[bi * g4..][..g4];
                for j in 0..h {
                    let (i, fg, gg, o) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                    let c = cache.cells[(step * b + bi) * h + j];
                    let c_prev = if step > 0 {
                        cache.cells[((step - 1) * b + bi) * h + j]
                    } else {
                        0.0
                    };
                    let tc = c.tanh();
                    let dhv = dh[bi * h + j];
                    let dcv = dc[bi * h + j] + dhv * o * (1.0 - tc * tc);
                    dzr[j] = dcv * gg * i * (1.0 - i);
                    dzr[h + j] = dcv * c_prev * fg * (1.0 - fg);
                    dzr[2 * h + j] = dcv * i * (1.0 - gg * gg);
                    dzr[3 * h + j] = dhv * tc * o * (1.0 - o);
                    dc[bi * h + j] = dcv * fg;
                }
            }
            if step > 0 {
                let prev = &cache.hidden[(step - 1) * b * h..][..b * h];
                gemm(
                    h,
                    b,
                    g4,
                    prev,
                    Strides::t(h),
                    dzs,
                    Strides::rm(g4),
                    1.0,
                    grads[self.wh].data_mut(),
                    Strides::rm(g4),
                );
                gemm(
                    b,
                    g4,
                    h,
                    dzs,
                    Strides::rm(g4),
                    wh,
                    Strides::t(g4),
                    0.0,
                    &mut dh,
                    Strides::rm(h),
                );
            }
        }
        let rows = t * b;
        gemm(
            f,
            rows,
            g4,
            cache.x.data(),
            Strides::t(f),
            &dz,
            Strides::rm(g4),
            1.0,
            grads[self.wx].data_mut(),
            Strides::rm(g4),
        );
        let db = grads[self.bias].data_mut();
        for row in dz.chunks(g4) {
            db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
        }
        need_dx.then(|| {
            let mut dx = vec![0.0; rows * f];
            gemm(
                rows,
                g4,
                f,
                &dz,
                Strides::rm(g4),
                params[self.wx].data(),
                Strides::t(g4),
                0.0,
                &mut dx,
                Strides::rm(f),
            );
            cache.x.with_data(dx)
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Dense {
    pub units: usize,
    /// `[I, O]`
    pub weight: usize,
    pub bias: usize,
}

impl Dense {
    fn forward(&self, params: &[Tensor], x: &Act) -> Act {
        let Act::Flat { b, f, .. } = *x else {
            unreachable!("dense expects a flat input")
        };
        let mut out = Vec::with_capacity(b * self.units);
        for _ in 0..b {
            out.extend_from_slice(params[self.bias].data());
        }
        gemm(
            b,
            f,
            self.units,
            x.data(),
            Strides::rm(f),
            params[self.weight].data(),
            Strides::rm(self.units),
            1.0,
            &mut out,
            Strides::rm(self.units),
        );
        Act::Flat {
            b,
            f: self.units,
            data: out,
        }
    }

    fn backward(
        &self,
        params: &[Tensor],
        x: &Act,
        dy: &[f64],
        grads: &mut [Tensor],
        need_dx: bool,
    ) -> Option<Act> {
        let Act::Flat { b, f, .. } = *x else {
            unreachable!()
        };
        let o = self.units;
        gemm(
            f,
            b,
            o,
            x.data(),
            Strides::t(f),
            dy,
            Strides::rm(o),
            1.0,
            grads[self.weight].data_mut(),
            Strides::rm(o),
        );
        let db = grads[self.bias].data_mut();
        for row in dy.chunks(o) {
            db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
        }
        need_dx.then(|| {
            let mut dx = vec![0.0; b * f];
            gemm(
                b,
                o,
                f,
                dy,
                Strides::rm(o),
                params[self.weight].data(),
                Strides::t(o),
                0.0,
                &mut dx,
                Strides::rm(f),
            );
            x.with_data(dx)
        })
    }
}

fn max_pool(kernel: (usize, usize), x: &Act) -> (Act, Vec<u32>) {
    let (c, nb, t, w) = x.map_dims();
    let (pt, pw) = ((kernel.0 - 1) / 2, (kernel.1 - 1) / 2);
    let mut out = vec![0.0; x.data().len()];
    let mut arg = vec![0u32; out.len()];
    for (p, plane) in x.data().chunks(t * w).enumerate() {
        debug_assert!(p < c * nb);
        let base = p * t * w;
        for oy in 0..t {
            let y0 = oy.saturating_sub(pt);
            let y1 = (oy + kernel.0 - pt).min(t);
            for ox in 0..w {
                let x0 = ox.saturating_sub(pw);
                let x1 = (ox + kernel.1 - pw).min(w);
                // Padding never wins: only real cells compete.
                let mut best = (f64::NEG_INFINITY, 0);
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        let v = plane[iy * w + ix];
                        if v > best.0 {
                            best = (v, iy * w + ix);
                        }
                    }
                }
                out[base + oy * w + ox] = best.0;
                arg[base + oy * w + ox] = best.1 as u32;
            }
        }
    }
    (x.with_data(out), arg)
}

fn to_sequence(x: &Act) -> Act {
    let (c, b, t, w) = x.map_dims();
    let f = c * w;
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for ci in 0..c {
        for bi in 0..b {
            for ti in 0..t {
                let s = &src[((ci * b + bi) * t + ti) * w..][..w];
                out[(ti * b + bi) * f + ci * w..][..w].copy_from_slice(s);
            }
        }
    }
    Act::Seq { t, b, f, data: out }
}

fn from_sequence(dy: &[f64], like: &Act) -> Act {
    let (c, b, t, w) = like.map_dims();
    let f = c * w;
    let mut out = vec![0.0; dy.len()];
    for ci in 0..c {
        for bi in 0..b {
            for ti in 0..t {
                out[((ci * b + bi) * t + ti) * w..][..w]
                    .copy_from_slice(&dy[(ti * b + bi) * f + ci * w..][..w]);
            }
        }
    }
    like.with_data(out)
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Conv(Conv),
    Leaky,
    MaxPool((usize, usize)),
    Inception(Vec<Vec<Node>>),
    Dropout(f64),
    ToSequence,
    Lstm(Lstm),
    Dense(Dense),
}

/// A runtime layer, tagged with the index of the declared layer it implements.
#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub layer: usize,
    pub op: Op,
}

pub(crate) enum Cache {
    Input(Act),
    Output(Act),
    Argmax(Act, Vec<u32>),
    Mask(Option<Vec<f64>>),
    Branches(Act, Vec<(usize, Vec<Cache>)>),
    Lstm(LstmCache),
}

impl Node {
    pub fn forward(&self, params: &[Tensor], x: Act, ctx: &mut Ctx) -> (Act, Cache) {
        match &self.op {
            Op::Conv(conv) => {
                let y = conv.forward(params, &x);
                (y, Cache::Input(x))
            }
            Op::Leaky => {
                let mut y = x;
                for v in y.data_mut().iter_mut() {
                    if *v < 0.0 {
                        *v *= LEAKY_SLOPE;
                    }
                }
                let keep = y.clone();
                (y, Cache::Output(keep))
            }
            Op::MaxPool(kernel) => {
                let (y, arg) = max_pool(*kernel, &x);
                (y, Cache::Argmax(x, arg))
            }
            Op::Inception(branches) => {
                let mut outs = Vec::with_capacity(branches.len());
                let mut caches = Vec::with_capacity(branches.len());
                for branch in branches {
                    let (y, cache) = run_forward(branch, params, x.clone(), ctx);
                    caches.push((y.data().len(), cache));
                    outs.push(y);
                }
                let (_, b, t, w) = outs[0].map_dims();
                let c = outs.iter().map(|o| o.map_dims().0).sum();
                let mut data = Vec::with_capacity(c * b * t * w);
                for o in outs {
                    data.extend_from_slice(o.data());
                }
                (Act::Map { c, b, t, w, data }, Cache::Branches(x, caches))
            }
            Op::Dropout(rate) => match ctx.rng.as_mut() {
                Some(rng) if *rate > 0.0 => {
                    let scale = 1.0 / (1.0 - rate);
                    let mask: Vec<f64> = (0..x.data().len())
                        .map(|_| if rng.gen::<f64>() < *rate { 0.0 } else { scale })
                        .collect();
                    let mut y = x;
                    y.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                    (y, Cache::Mask(Some(mask)))
                }
                _ => (x, Cache::Mask(None)),
            },
            Op::ToSequence => {
                let y = to_sequence(&x);
                (y, Cache::Input(x.with_data(Vec::new())))
            }
            Op::Lstm(lstm) => {
                let (y, cache) = lstm.forward(params, x);
                (y, Cache::Lstm(cache))
            }
            Op::Dense(dense) => {
                let y = dense.forward(params, &x);
                (y, Cache::Input(x))
            }
        }
    }

    pub fn backward(
        &self,
        params: &[Tensor],
        cache: &Cache,
        dy: Act,
        grads: &mut [Tensor],
        need_dx: bool,
    ) -> Option<Act> {
        match (&self.op, cache) {
            (Op::Conv(conv), Cache::Input(x)) => conv.backward(params, x, dy.data(), grads, need_dx),
            (Op::Leaky, Cache::Output(y)) => {
                let mut dx = dy;
                for (d, v) in dx.data_mut().iter_mut().zip(y.data()) {
                    if *v <= 0.0 {
                        *d *= LEAKY_SLOPE;
                    }
                }
                Some(dx)
            }
            (Op::MaxPool(_), Cache::Argmax(x, arg)) => {
                let (_, _, t, w) = x.map_dims();
                let plane = t * w;
                let mut dx = vec![0.0; x.data().len()];
                for (i, (d, a)) in dy.data().iter().zip(arg).enumerate() {
                    dx[(i / plane) * plane + *a as usize] += d;
                }
                Some(x.with_data(dx))
            }
            (Op::Inception(branches), Cache::Branches(x, caches)) => {
                let mut dx = vec![0.0; x.data().len()];
                let mut offset = 0;
                for (branch, (len, cache)) in branches.iter().zip(caches) {
                    let Act::Map { b, t, w, .. } = dy else {
                        unreachable!()
                    };
                    let part = Act::Map {
                        c: len / (b * t * w),
                        b,
                        t,
                        w,
                        data: dy.data()[offset..offset + len].to_vec(),
                    };
                    offset += len;
                    if let Some(d) = run_backward(branch, params, cache, part, grads, need_dx) {
                        dx.iter_mut().zip(d.data()).for_each(|(a, v)| *a += v);
                    }
                }
                need_dx.then(|| x.with_data(dx))
            }
            (Op::Dropout(_), Cache::Mask(mask)) => {
                let mut dx = dy;
                if let Some(mask) = mask {
                    dx.data_mut().iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
                }
                Some(dx)
            }
            (Op::ToSequence, Cache::Input(like)) => Some(from_sequence(dy.data(), like)),
            (Op::Lstm(lstm), Cache::Lstm(c)) => lstm.backward(params, c, dy.data(), grads, need_dx),
            (Op::Dense(dense), Cache::Input(x)) => dense.backward(params, x, dy.data(), grads, need_dx),
            _ => unreachable!("cache does not belong to this layer"),
        }
    }
}

/// Runs a node list; caches come back in forward order.
pub(crate) fn run_forward(nodes: &[Node], params: &[Tensor], x: Act, ctx: &mut Ctx) -> (Act, Vec<Cache>) {
    let mut caches = Vec::with_capacity(nodes.len());
    let mut a = x;
    for node in nodes {
        let (y, cache) = node.forward(params, a, ctx);
        caches.push(cache);
        a = y;
    }
    (a, caches)
}

pub(crate) fn run_backward(
    nodes: &[Node],
    params: &[Tensor],
    caches: &[Cache],
    dy: Act,
    grads: &mut [Tensor],
    need_dx: bool,
) -> Option<Act> {
    let mut d = dy;
    for (i, (node, cache)) in nodes.iter().zip(caches).enumerate().rev() {
        let need = need_dx || i > 0;
        d = node.backward(params, cache, d, grads, need)?;
    }
    Some(d)
}
