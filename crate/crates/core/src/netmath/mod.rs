//! Framework-free forward math for the occlusion estimation decoder and the decoupled head.
//!
//! Nothing here is trained. Weights come from a seeded ChaCha8 stream so that every forward
//! pass is reproducible across platforms; the point is to pin down shapes, wiring and loss math.

mod check;
pub mod loss;

pub use check::{run_netcheck, CheckOutcome};
pub use loss::{l_cls, l_cls_terms, l_loc, l_loc_terms, l_occ, l_total, pairwise_sum, smooth_l1, LossWeights};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::occlusion_map::OcclusionMap;

/// Dense `(n, c, h, w)` tensor in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(dims: (usize, usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let (n, c, h, w) = dims;
        if data.len() != n * c * h * w {
            return Err(Error::invalid(format!(
                "tensor {dims:?} needs {} values, got {}",
                n * c * h * w,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("tensor contains non-finite values"));
        }
        Ok(Tensor4 { n, c, h, w, data })
    }

    pub fn zeros(dims: (usize, usize, usize, usize)) -> Self {
        let (n, c, h, w) = dims;
        Tensor4 {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    /// Uniform values in `[-1, 1)` from a seeded stream.
    pub fn random(dims: (usize, usize, usize, usize), seed: u64) -> Self {
        let mut t = Tensor4::zeros(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        t.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        t
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, i: usize, j: usize) -> usize {
        ((n * self.c + c) * self.h + i) * self.w + j
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, i: usize, j: usize) -> f64 {
        self.data[self.index(n, c, i, j)]
    }

    fn plane(&self, n: usize, c: usize) -> &[f64] {
        let hw = self.h * self.w;
        let start = (n * self.c + c) * hw;
        &self.data[start..start + hw]
    }
}

/// Channel-to-space rearrangement: `(n, c, h, w)` → `(n, c/r², h·r, w·r)` with
/// `out[n][k][i·r+di][j·r+dj] = in[n][k·r²+di·r+dj][i][j]`.
pub fn pixel_shuffle(x: &Tensor4, r: usize) -> Result<Tensor4> {
    if r == 0 {
        return Err(Error::invalid("upscale factor must be at least 1"));
    }
    let (n, c, h, w) = x.dims();
    if c % (r * r) != 0 {
        return Err(Error::invalid(format!("channels {c} not divisible by r^2 = {}", r * r)));
    }
    let oc = c / (r * r);
    let mut out = Tensor4::zeros((n, oc, h * r, w * r));
    for b in 0..n {
        for k in 0..oc {
            for di in 0..r {
                for dj in 0..r {
                    let src_c = k * r * r + di * r + dj;
                    for i in 0..h {
                        for j in 0..w {
                            let dst = out.index(b, k, i * r + di, j * r + dj);
                            out.data[dst] = x.at(b, src_c, i, j);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle(x: &Tensor4, r: usize) -> Result<Tensor4> {
    if r == 0 {
        return Err(Error::invalid("downscale factor must be at least 1"));
    }
    let (n, c, h, w) = x.dims();
    if h % r != 0 || w % r != 0 {
        return Err(Error::invalid(format!("spatial dims {h}x{w} not divisible by {r}")));
    }
    let (oh, ow) = (h / r, w / r);
    let mut out = Tensor4::zeros((n, c * r * r, oh, ow));
    for b in 0..n {
        for k in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let dst_c = k * r * r + (i % r) * r + (j % r);
                    let dst = out.index(b, dst_c, i / r, j / r);
                    out.data[dst] = x.at(b, k, i, j);
                }
            }
        }
    }
    Ok(out)
}

fn uniform(rng: &mut ChaCha8Rng, len: usize, bound: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Pointwise (1×1) convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1x1 {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[out][in]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv1x1 {
    pub fn seeded(in_channels: usize, out_channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_channels as f64).sqrt();
        Conv1x1 {
            in_channels,
            out_channels,
            weight: uniform(rng, in_channels * out_channels, bound),
            bias: uniform(rng, out_channels, bound),
        }
    }

    /// Applies the convolution to `planes` (one `h·w` slice per input channel) for one sample.
    fn apply(&self, planes: &[&[f64]], hw: usize) -> Vec<Vec<f64>> {
        (0..self.out_channels)
            .map(|o| {
                let mut acc = vec![self.bias[o]; hw];
                for (i, plane) in planes.iter().enumerate() {
                    let wt = self.weight[o * self.in_channels + i];
                    for (a, v) in acc.iter_mut().zip(plane.iter()) {
                        *a += wt * v;
                    }
                }
                acc
            })
            .collect()
    }

    fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        let (n, c, h, w) = x.dims();
        if c != self.in_channels {
            return Err(Error::invalid(format!("1x1 conv expects {} channels, got {c}", self.in_channels)));
        }
        let mut data = Vec::with_capacity(n * self.out_channels * h * w);
        for b in 0..n {
            let planes: Vec<&[f64]> = (0..c).map(|k| x.plane(b, k)).collect();
            for out in self.apply(&planes, h * w) {
                data.extend(out);
            }
        }
        Tensor4::new((n, self.out_channels, h, w), data)
    }
}

/// Dense `k×k` convolution with zero padding and stride 1 over one sample's planes.
fn conv_same(planes: &[&[f64]], h: usize, w: usize, kernel: &[f64], bias: &[f64], k: usize) -> Vec<Vec<f64>> {
    let cin = planes.len();
    let r = (k / 2) as isize;
    (0..bias.len())
        .map(|o| {
            let mut out = vec![bias[o]; h * w];
            for (ci, plane) in planes.iter().enumerate() {
                for di in 0..k {
                    for dj in 0..k {
                        let wt = kernel[((o * cin + ci) * k + di) * k + dj];
                        if wt == 0.0 {
                            continue;
                        }
                        let (oi, oj) = (di as isize - r, dj as isize - r);
                        for i in 0..h as isize {
                            let si = i + oi;
                            if !(0..h as isize).contains(&si) {
                                continue;
                            }
                            for j in 0..w as isize {
                                let sj = j + oj;
                                if (0..w as isize).contains(&sj) {
                                    out[(i * w as isize + j) as usize] += wt * plane[(si * w as isize + sj) as usize];
                                }
                            }
                        }
                    }
                }
            }
            out
        })
        .collect()
}

fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

/// Parameters of the split-transform-merge block.
#[derive(Debug, Clone, PartialEq)]
pub struct CspWeights {
    pub channels: usize,
    /// `[half][half][3][3]`
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl CspWeights {
    pub fn seeded(channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let half = channels / 2;
        let bound = 1.0 / ((half * 9).max(1) as f64).sqrt();
        CspWeights {
            channels,
            kernel: uniform(rng, half * half * 9, bound),
            bias: uniform(rng, half, bound),
        }
    }

    /// Kernel that copies each channel through (centre tap 1), zero bias.
    pub fn identity(channels: usize) -> Self {
        let half = channels / 2;
        let mut kernel = vec![0.0; half * half * 9];
        for o in 0..half {
            kernel[(o * half + o) * 9 + 4] = 1.0;
        }
        CspWeights {
            channels,
            kernel,
            bias: vec![0.0; half],
        }
    }
}

/// Splits channels in half, runs `ReLU(conv3x3(first half))`, and concatenates it with the
/// untouched second half.
pub fn csp_mix(x: &Tensor4, weights: &CspWeights) -> Result<Tensor4> {
    let (n, c, h, w) = x.dims();
    if c % 2 != 0 {
        return Err(Error::invalid(format!("csp block needs an even channel count, got {c}")));
    }
    if c != weights.channels {
        return Err(Error::invalid(format!("csp weights built for {} channels, got {c}", weights.channels)));
    }
    let half = c / 2;
    let mut data = Vec::with_capacity(x.data.len());
    for b in 0..n {
        let planes: Vec<&[f64]> = (0..half).map(|k| x.plane(b, k)).collect();
        for mut out in conv_same(&planes, h, w, &weights.kernel, &weights.bias, 3) {
            relu_in_place(&mut out);
            data.extend(out);
        }
        for k in half..c {
            data.extend_from_slice(x.plane(b, k));
        }
    }
    Tensor4::new((n, c, h, w), data)
}

/// One upsample-then-mix stage of the occlusion decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct OemStage {
    /// Width adapter applied after the shuffle when the shuffled channel count is odd.
    pub adapt: Option<Conv1x1>,
    pub csp: CspWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OemWeights {
    pub in_channels: usize,
    pub stages: Vec<OemStage>,
    pub projection: Conv1x1,
}

impl OemWeights {
    /// Seeded weights for `p_stages` shuffle/mix stages. Each stage's width is the shuffled
    /// channel count rounded up to an even number (at least 2).
    pub fn seeded(in_channels: usize, p_stages: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = in_channels;
        let mut stages = Vec::with_capacity(p_stages);
        for p in 0..p_stages {
            if c % 4 != 0 {
                return Err(Error::invalid(format!(
                    "stage {p}: {c} channels cannot be pixel-shuffled by 2"
                )));
            }
            let shuffled = c / 4;
            let width = (shuffled + shuffled % 2).max(2);
            let adapt = (width != shuffled).then(|| Conv1x1::seeded(shuffled, width, &mut rng));
            stages.push(OemStage {
                adapt,
                csp: CspWeights::seeded(width, &mut rng),
            });
            c = width;
        }
        Ok(OemWeights {
            in_channels,
            stages,
            projection: Conv1x1::seeded(c, 1, &mut rng),
        })
    }
}

/// Occlusion decoder forward pass: `p_stages` × (PixelShuffle(2) → CSP mix), then a one-channel
/// projection clamped to `[0, 1]`. Returns one map per batch sample, with one map cell per
/// output pixel.
pub fn oem_forward(f: &Tensor4, p_stages: usize, weights: &OemWeights) -> Result<Vec<OcclusionMap>> {
    if weights.stages.len() != p_stages {
        return Err(Error::invalid(format!(
            "weights have {} stages, forward asked for {p_stages}",
            weights.stages.len()
        )));
    }
    if f.c != weights.in_channels {
        return Err(Error::invalid(format!("decoder expects {} channels, got {}", weights.in_channels, f.c)));
    }
    let mut x = f.clone();
    for stage in &weights.stages {
        x = pixel_shuffle(&x, 2)?;
        if let Some(adapt) = &stage.adapt {
            x = adapt.forward(&x)?;
        }
        x = csp_mix(&x, &stage.csp)?;
    }
    let proj = weights.projection.forward(&x)?;
    let (n, _, h, w) = proj.dims();
    (0..n)
        .map(|b| {
            let vals = proj.plane(b, 0).iter().map(|v| v.clamp(0.0, 1.0)).collect();
            OcclusionMap::from_values(w as u32, h as u32, 1, vals)
        })
        .collect()
}

/// Parameters of the decoupled classification/localization feature paths.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoupleWeights {
    pub in_channels: usize,
    pub out_channels: usize,
    pub lk_kernel: usize,
    /// 1×1 fusion over `in_channels` feature channels plus the occlusion channel (last).
    pub fuse: Conv1x1,
    /// Folded batch-norm scale and shift.
    pub bn_scale: Vec<f64>,
    pub bn_shift: Vec<f64>,
    /// Depthwise large kernel, `[out][k][k]`.
    pub lk: Vec<f64>,
    pub lk_bias: Vec<f64>,
}

impl DecoupleWeights {
    pub fn seeded(in_channels: usize, out_channels: usize, lk_kernel: usize, seed: u64) -> Result<Self> {
        check_lk(lk_kernel)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fuse = Conv1x1::seeded(in_channels + 1, out_channels, &mut rng);
        let bn_scale = (0..out_channels).map(|_| rng.random_range(0.5..1.5)).collect();
        let bn_shift = uniform(&mut rng, out_channels, 0.1);
        let bound = 1.0 / lk_kernel as f64;
        Ok(DecoupleWeights {
            in_channels,
            out_channels,
            lk_kernel,
            fuse,
            bn_scale,
            bn_shift,
            lk: uniform(&mut rng, out_channels * lk_kernel * lk_kernel, bound),
            lk_bias: uniform(&mut rng, out_channels, bound),
        })
    }

    /// Replaces the large kernel with a centre-tap identity and zero bias.
    pub fn with_identity_lk(mut self) -> Self {
        let k = self.lk_kernel;
        self.lk = vec![0.0; self.out_channels * k * k];
        for o in 0..self.out_channels {
            self.lk[(o * k + k / 2) * k + k / 2] = 1.0;
        }
        self.lk_bias = vec![0.0; self.out_channels];
        self
    }

    /// Zeroes the fusion weights that read the occlusion channel.
    pub fn with_zero_occlusion_channel(mut self) -> Self {
        let cin = self.fuse.in_channels;
        for o in 0..self.out_channels {
            self.fuse.weight[o * cin + cin - 1] = 0.0;
        }
        self
    }
}

fn check_lk(k: usize) -> Result<()> {
    if k % 2 == 0 {
        return Err(Error::invalid(format!("large kernel size must be odd, got {k}")));
    }
    Ok(())
}

/// Decoupled head features: `f_loc = ReLU(BN(conv1x1(cat(f, occ))))` and
/// `f_cls = ReLU(depthwise_lk(f_loc))`. The occlusion map is nearest-resampled to `f`'s
/// spatial size and shared by every batch sample.
pub fn decouple_features(f: &Tensor4, occ: &OcclusionMap, weights: &DecoupleWeights, lk_kernel: usize) -> Result<(Tensor4, Tensor4)> {
    check_lk(lk_kernel)?;
    if lk_kernel != weights.lk_kernel {
        return Err(Error::invalid(format!(
            "weights built for kernel {}, asked for {lk_kernel}",
            weights.lk_kernel
        )));
    }
    let (n, c, h, w) = f.dims();
    if c != weights.in_channels {
        return Err(Error::invalid(format!("head expects {} channels, got {c}", weights.in_channels)));
    }
    let occ_plane = occ.resample_nearest(h, w);
    let cout = weights.out_channels;
    let k = lk_kernel;

    let mut loc = Vec::with_capacity(n * cout * h * w);
    let mut cls = Vec::with_capacity(n * cout * h * w);
    for b in 0..n {
        let mut planes: Vec<&[f64]> = (0..c).map(|ch| f.plane(b, ch)).collect();
        planes.push(&occ_plane);
        let fused = weights.fuse.apply(&planes, h * w);
        let loc_planes: Vec<Vec<f64>> = fused
            .into_iter()
            .enumerate()
            .map(|(o, mut p)| {
                p.iter_mut()
                    .for_each(|v| *v = (weights.bn_scale[o] * *v + weights.bn_shift[o]).max(0.0));
                p
            })
            .collect();
        for (o, plane) in loc_planes.iter().enumerate() {
            let kernel = &weights.lk[o * k * k..(o + 1) * k * k];
            let mut out = conv_same(&[plane.as_slice()], h, w, kernel, &weights.lk_bias[o..o + 1], k)
                .pop()
                .expect("one output plane");
            relu_in_place(&mut out);
            cls.extend(out);
        }
        loc.extend(loc_planes.into_iter().flatten());
    }
    Ok((Tensor4::new((n, cout, h, w), cls)?, Tensor4::new((n, cout, h, w), loc)?))
}
