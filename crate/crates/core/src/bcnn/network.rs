//! U-Net architecture, parameters, and the forward/backward passes.
//!
//! Every convolution is preceded by dropout. Encoder levels run two 3×3
//! convolutions with ReLU and a 2×2 max-pool; the bottleneck has two more
//! convolutions; each decoder level upsamples ×2 (nearest), applies a 3×3
//! convolution, concatenates the matching encoder output (skip first) and runs
//! two 3×3 convolutions. A 1×1 convolution produces the head channels.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use super::layers::{col2im, dropout_mask, im2col, max_pool2, max_pool2_backward, upsample2, upsample2_backward};
use super::loss::{head_loss, head_maps};
use super::real::Real;
use super::{NetworkConfig, PredictionMaps};
use crate::seed::{self, Rng};
use crate::{Error, Image, Result};
#[cfg(not(feature = "std"))]
use num_traits::Float;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub relu: bool,
}

impl ConvSpec {
    fn new(name: String, in_channels: usize, out_channels: usize, kernel: usize, relu: bool) -> Self {
        Self { name, in_channels, out_channels, kernel, relu }
    }

    pub fn kernel_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    pub fn parameter_count(&self) -> usize {
        self.kernel_len() + self.out_channels
    }
}

/// Architecture descriptor: network configuration plus input side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Architecture {
    pub config: NetworkConfig,
    pub side: usize,
}

impl Architecture {
    pub fn new(config: NetworkConfig, side: usize) -> Result<Self> {
        config.validate()?;
        let factor = 1usize << config.levels;
        if side == 0 || side % factor != 0 {
            return Err(Error::Config(format!(
                "input side {side} is not divisible by 2^{} = {factor}",
                config.levels
            )));
        }
        Ok(Self { config, side })
    }

    pub fn width(&self, level: usize) -> usize {
        self.config.base_channels << level
    }

    pub fn out_channels(&self) -> usize {
        self.config.likelihood.channels()
    }

    /// Convolutions in execution order.
    pub fn convs(&self) -> Vec<ConvSpec> {
        let levels = self.config.levels;
        let mut convs = Vec::new();
        let mut c_in = 1;
        for l in 0..levels {
            let c = self.width(l);
            convs.push(ConvSpec::new(format!("enc{l}.conv0"), c_in, c, 3, true));
            convs.push(ConvSpec::new(format!("enc{l}.conv1"), c, c, 3, true));
            c_in = c;
        }
        let cb = self.width(levels);
        convs.push(ConvSpec::new("bottleneck.conv0".into(), c_in, cb, 3, true));
        convs.push(ConvSpec::new("bottleneck.conv1".into(), cb, cb, 3, true));
        for l in (0..levels).rev() {
            let c = self.width(l);
            convs.push(ConvSpec::new(format!("dec{l}.up"), self.width(l + 1), c, 3, true));
            convs.push(ConvSpec::new(format!("dec{l}.conv0"), 2 * c, c, 3, true));
            convs.push(ConvSpec::new(format!("dec{l}.conv1"), c, c, 3, true));
        }
        convs.push(ConvSpec::new("head".into(), self.width(0), self.out_channels(), 1, false));
        convs
    }

    pub fn parameter_count(&self) -> usize {
        self.convs().iter().map(ConvSpec::parameter_count).sum()
    }

    /// `(name, shape)` of every tensor: kernel `[out, in, k, k]` then bias `[out]`, per convolution.
    pub fn tensor_layout(&self) -> Vec<(String, Vec<usize>)> {
        self.convs()
            .into_iter()
            .flat_map(|c| {
                [
                    (format!("{}.kernel", c.name), vec![c.out_channels, c.in_channels, c.kernel, c.kernel]),
                    (format!("{}.bias", c.name), vec![c.out_channels]),
                ]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// All learnable parameters of the network, in [`Architecture::tensor_layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights<T = f32> {
    arch: Architecture,
    tensors: Vec<Tensor<T>>,
}

/// Gradient buffers shaped like the tensors of a [`NetworkWeights`].
pub type Gradients<T> = Vec<Vec<T>>;

/// Fan-in scaled uniform initialization, `U(−√(6/fan_in), √(6/fan_in))`, zero biases.
pub fn init_network(cfg: &NetworkConfig, input_side: usize, seed: u64) -> Result<NetworkWeights<f32>> {
    NetworkWeights::init(Architecture::new(*cfg, input_side)?, seed)
}

impl<T: Real> NetworkWeights<T> {
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        let mut rng = seed::rng(seed);
        let tensors = arch
            .convs()
            .into_iter()
            .flat_map(|c| {
                let fan_in = (c.in_channels * c.kernel * c.kernel) as f64;
                let bound = (6.0 / fan_in).sqrt();
                let kernel: Vec<T> = (0..c.kernel_len())
                    .map(|_| T::from_f64(rng.random_range(-bound..bound)))
                    .collect();
                [
                    Tensor {
                        name: format!("{}.kernel", c.name),
                        shape: vec![c.out_channels, c.in_channels, c.kernel, c.kernel],
                        data: kernel,
                    },
                    Tensor {
                        name: format!("{}.bias", c.name),
                        shape: vec![c.out_channels],
                        data: vec![T::zero(); c.out_channels],
                    },
                ]
            })
            .collect();
        Ok(Self { arch, tensors })
    }

    /// Builds weights from explicit tensors, checking names and shapes against the architecture.
    pub fn from_tensors(arch: Architecture, tensors: Vec<Tensor<T>>) -> Result<Self> {
        let layout = arch.tensor_layout();
        if layout.len() != tensors.len() {
            return Err(Error::Dimension(format!(
                "architecture has {} tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if *name != t.name || *shape != t.shape {
                return Err(Error::Dimension(format!(
                    "expected {name} {shape:?}, got {} {:?}",
                    t.name, t.shape
                )));
            }
            if t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Dimension(format!("{name} holds {} values", t.data.len())));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("{name} has non-finite entries")));
            }
        }
        Ok(Self { arch, tensors })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.arch.config
    }

    pub fn side(&self) -> usize {
        self.arch.side
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        self.tensors.iter().map(|t| vec![T::zero(); t.data.len()]).collect()
    }

    pub fn cast<U: Real>(&self) -> NetworkWeights<U> {
        NetworkWeights {
            arch: self.arch,
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    fn input_from(&self, x: &Image) -> Result<Vec<T>> {
        if x.height() != self.side() || x.width() != self.side() {
            return Err(Error::Dimension(format!(
                "{}x{} input for a side-{} network",
                x.height(),
                x.width(),
                self.side()
            )));
        }
        if !x.is_finite() {
            return Err(Error::Numeric("non-finite input pixels".into()));
        }
        Ok(x.data().iter().map(|&v| T::from_f64(v)).collect())
    }

    /// Raw head outputs (channel-major `μ` logits then pre-softplus `σ`).
    pub fn forward_raw(&self, x: &Image, dropout_active: bool, mask_seed: u64) -> Result<Vec<T>> {
        let input = self.input_from(x)?;
        let mut pass = Pass::new(self, dropout_active, mask_seed, false);
        let out = pass.run(input);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite activation".into()));
        }
        Ok(out)
    }

    /// Distribution maps for one forward pass.
    pub fn predict_maps(&self, x: &Image, dropout_active: bool, mask_seed: u64) -> Result<PredictionMaps> {
        let z = self.forward_raw(x, dropout_active, mask_seed)?;
        head_maps(self.config(), &z, self.side())
    }

    /// Negative log-likelihood of `target` for one input, accumulating its
    /// gradient (scaled by `scale`) into `grads`. The L2 term is not included.
    pub fn accumulate_gradients(
        &self,
        x: &Image,
        target: &Image,
        dropout_active: bool,
        mask_seed: u64,
        scale: T,
        grads: &mut Gradients<T>,
    ) -> Result<f64> {
        let input = self.input_from(x)?;
        if !target.same_shape(x) {
            return Err(Error::Dimension("target and input shapes differ".into()));
        }
        if target.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("target pixels must lie in [0, 1]".into()));
        }
        let mut pass = Pass::new(self, dropout_active, mask_seed, true);
        let z = pass.run(input);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite activation".into()));
        }
        let (loss, mut dz) = head_loss(self.config(), &z, target.data());
        if scale != T::one() {
            dz.iter_mut().for_each(|g| *g *= scale);
        }
        pass.backward(dz, grads);
        Ok(loss)
    }
}

/// Distribution maps for `x`. With `dropout_active`, masks are drawn from `mask_seed`.
pub fn forward<T: Real>(
    w: &NetworkWeights<T>,
    x: &Image,
    dropout_active: bool,
    mask_seed: u64,
) -> Result<PredictionMaps> {
    w.predict_maps(x, dropout_active, mask_seed)
}

struct ConvCache<T> {
    cols: Vec<T>,
    mask: Option<Vec<T>>,
    /// Post-ReLU output, kept for the ReLU derivative.
    out: Vec<T>,
    h: usize,
    w: usize,
}

struct Pass<'a, T: Real> {
    weights: &'a NetworkWeights<T>,
    specs: Vec<ConvSpec>,
    rng: Option<Rng>,
    rate: f64,
    record: bool,
    caches: Vec<ConvCache<T>>,
    pools: Vec<Vec<u32>>,
}

impl<'a, T: Real> Pass<'a, T> {
    fn new(weights: &'a NetworkWeights<T>, dropout_active: bool, mask_seed: u64, record: bool) -> Self {
        let rate = weights.config().dropout_rate;
        let rng = (dropout_active && rate > 0.0).then(|| seed::rng(mask_seed));
        Self {
            weights,
            specs: weights.arch.convs(),
            rng,
            rate,
            record,
            caches: Vec::new(),
            pools: Vec::new(),
        }
    }

    fn conv(&mut self, layer: usize, mut x: Vec<T>, h: usize, w: usize) -> Vec<T> {
        let spec = &self.specs[layer];
        let hw = h * w;
        debug_assert_eq!(x.len(), spec.in_channels * hw);
        let mask = self.rng.as_mut().map(|rng| {
            let mask = dropout_mask::<T>(rng, x.len(), self.rate);
            x.iter_mut().zip(&mask).for_each(|(v, m)| *v *= *m);
            mask
        });
        let cols = if spec.kernel == 1 { x } else { im2col(&x, spec.in_channels, h, w, spec.kernel) };
        let kernel = &self.weights.tensors[2 * layer].data;
        let bias = &self.weights.tensors[2 * layer + 1].data;
        let mut out = Vec::with_capacity(spec.out_channels * hw);
        for b in bias {
            out.extend(core::iter::repeat(*b).take(hw));
        }
        let depth = spec.in_channels * spec.kernel * spec.kernel;
        T::gemm(spec.out_channels, depth, hw, T::one(), kernel, false, &cols, false, T::one(), &mut out);
        if spec.relu {
            out.iter_mut().for_each(|v| {
                if *v < T::zero() {
                    *v = T::zero()
                }
            });
        }
        if self.record {
            let kept = if spec.relu { out.clone() } else { Vec::new() };
            self.caches.push(ConvCache { cols, mask, out: kept, h, w });
        }
        out
    }

    fn run(&mut self, input: Vec<T>) -> Vec<T> {
        let arch = self.weights.arch;
        let levels = arch.config.levels;
        let mut side = arch.side;
        let mut layer = 0;
        let mut h = input;
        let mut skips = Vec::with_capacity(levels);
        for l in 0..levels {
            h = self.conv(layer, h, side, side);
            h = self.conv(layer + 1, h, side, side);
            layer += 2;
            let (pooled, arg) = max_pool2(&h, arch.width(l), side, side);
            skips.push(h);
            if self.record {
                self.pools.push(arg);
            }
            h = pooled;
            side /= 2;
        }
        h = self.conv(layer, h, side, side);
        h = self.conv(layer + 1, h, side, side);
        layer += 2;
        for l in (0..levels).rev() {
            h = upsample2(&h, arch.width(l + 1), side, side);
            side *= 2;
            h = self.conv(layer, h, side, side);
            let mut joined = skips.pop().expect("one skip per level");
            joined.extend_from_slice(&h);
            h = self.conv(layer + 1, joined, side, side);
            h = self.conv(layer + 2, h, side, side);
            layer += 3;
        }
        self.conv(layer, h, side, side)
    }

    /// Backpropagates through layer `layer`; returns the gradient w.r.t. its input
    /// unless `need_input` is false.
    fn conv_backward(&mut self, layer: usize, mut g: Vec<T>, grads: &mut Gradients<T>, need_input: bool) -> Vec<T> {
        let spec = &self.specs[layer];
        let cache = self.caches.pop().expect("cache per convolution");
        let hw = cache.h * cache.w;
        if spec.relu {
            g.iter_mut().zip(&cache.out).for_each(|(d, o)| {
                if *o <= T::zero() {
                    *d = T::zero()
                }
            });
        }
        let depth = spec.in_channels * spec.kernel * spec.kernel;
        {
            let (dk, rest) = grads[2 * layer..].split_at_mut(1);
            let db = &mut rest[0];
            for (o, row) in g.chunks_exact(hw).enumerate() {
                let mut s = T::zero();
                for v in row {
                    s += *v;
                }
                db[o] += s;
            }
            T::gemm(spec.out_channels, hw, depth, T::one(), &g, false, &cache.cols, true, T::one(), &mut dk[0]);
        }
        if !need_input {
            return Vec::new();
        }
        let kernel = &self.weights.tensors[2 * layer].data;
        let mut dcols = vec![T::zero(); depth * hw];
        T::gemm(depth, spec.out_channels, hw, T::one(), kernel, true, &g, false, T::zero(), &mut dcols);
        let mut dx = if spec.kernel == 1 {
            dcols
        } else {
            col2im(&dcols, spec.in_channels, cache.h, cache.w, spec.kernel)
        };
        if let Some(mask) = &cache.mask {
            dx.iter_mut().zip(mask).for_each(|(d, m)| *d *= *m);
        }
        dx
    }

    fn backward(&mut self, dz: Vec<T>, grads: &mut Gradients<T>) {
        let arch = self.weights.arch;
        let levels = arch.config.levels;
        let mut layer = self.specs.len() - 1;
        let mut g = self.conv_backward(layer, dz, grads, true);
        let mut side = arch.side;
        let mut skip_grads: Vec<Vec<T>> = Vec::with_capacity(levels);
        for l in 0..levels {
            let c = arch.width(l);
            layer -= 1;
            g = self.conv_backward(layer, g, grads, true);
            layer -= 1;
            g = self.conv_backward(layer, g, grads, true);
            let up_grad = g.split_off(c * side * side);
            skip_grads.push(g);
            layer -= 1;
            g = self.conv_backward(layer, up_grad, grads, true);
            side /= 2;
            g = upsample2_backward(&g, arch.width(l + 1), side, side);
        }
        layer -= 1;
        g = self.conv_backward(layer, g, grads, true);
        layer -= 1;
        g = self.conv_backward(layer, g, grads, true);
        for l in (0..levels).rev() {
            let c = arch.width(l);
            let arg = self.pools.pop().expect("pool per level");
            side *= 2;
            g = max_pool2_backward(&g, &arg, c * side * side);
            let skip = skip_grads.pop().expect("skip per level");
            g.iter_mut().zip(&skip).for_each(|(a, b)| *a += *b);
            layer -= 1;
            g = self.conv_backward(layer, g, grads, true);
            layer -= 1;
            g = self.conv_backward(layer, g, grads, layer != 0);
        }
        debug_assert_eq!(layer, 0);
        debug_assert!(self.caches.is_empty());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bcnn::Likelihood;

    fn small() -> NetworkConfig {
        NetworkConfig { levels: 1, base_channels: 4, ..Default::default() }
    }

    #[test]
    fn indivisible_side_is_rejected() {
        assert!(matches!(init_network(&NetworkConfig::default(), 36, 1), Err(Error::Config(_))));
    }

    #[test]
    fn default_parameter_count() {
        // Hand count for levels = 3, base = 32 (3×3 kernels: 9·in·out + out).
        let per = |i: usize, o: usize| 9 * i * o + o;
        let encoder = per(1, 32) + per(32, 32) + per(32, 64) + per(64, 64) + per(64, 128) + per(128, 128);
        let bottleneck = per(128, 256) + per(256, 256);
        let decoder = per(256, 128) + per(256, 128) + per(128, 128)
            + per(128, 64) + per(128, 64) + per(64, 64)
            + per(64, 32) + per(64, 32) + per(32, 32);
        assert_eq!(encoder + bottleneck + decoder, 2_140_032);
        let bern = Architecture::new(NetworkConfig::default(), 32).unwrap();
        assert_eq!(bern.parameter_count(), 2_140_032 + 33);
        let lap = Architecture::new(NetworkConfig::default().with_likelihood(Likelihood::Laplacian), 32).unwrap();
        assert_eq!(lap.parameter_count(), 2_140_032 + 66);
        let w = init_network(&NetworkConfig::default(), 32, 0).unwrap();
        assert_eq!(w.parameter_count(), 2_140_065);
    }

    #[test]
    fn init_is_seeded() {
        let a = init_network(&small(), 8, 5).unwrap();
        let b = init_network(&small(), 8, 5).unwrap();
        let c = init_network(&small(), 8, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_weights_give_neutral_heads() {
        let cfg = small().with_likelihood(Likelihood::Gaussian);
        let mut w = init_network(&cfg, 8, 1).unwrap();
        w.tensors_mut().iter_mut().for_each(|t| t.data.iter_mut().for_each(|v| *v = 0.0));
        let x = Image::filled(8, 8, 0.7);
        let maps = forward(&w, &x, true, 3).unwrap();
        assert!(maps.mu.data().iter().all(|&m| m == 0.5));
        let s = maps.sigma.unwrap();
        assert!(s.data().iter().all(|&v| (v - (core::f64::consts::LN_2 + 1e-3)).abs() < 1e-7));
    }

    #[test]
    fn dropout_switches() {
        let w = init_network(&small(), 8, 2).unwrap();
        let x = Image::square(8, (0..64).map(|i| (i % 9) as f64 / 9.0).collect()).unwrap();
        assert_eq!(forward(&w, &x, false, 1).unwrap(), forward(&w, &x, false, 99).unwrap());
        assert_eq!(forward(&w, &x, true, 1).unwrap(), forward(&w, &x, true, 1).unwrap());
        assert_ne!(forward(&w, &x, true, 1).unwrap(), forward(&w, &x, true, 2).unwrap());

        let no_drop = NetworkConfig { dropout_rate: 0.0, ..small() };
        let w0 = init_network(&no_drop, 8, 2).unwrap();
        assert_eq!(forward(&w0, &x, true, 1).unwrap(), forward(&w0, &x, false, 1).unwrap());
    }

    #[test]
    fn wrong_input_side() {
        let w = init_network(&small(), 8, 2).unwrap();
        assert!(matches!(forward(&w, &Image::zeros(16, 16), false, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn f32_and_f64_agree() {
        let w = init_network(&NetworkConfig { levels: 2, ..small() }, 16, 4).unwrap();
        let w64 = w.cast::<f64>();
        let x = Image::square(16, (0..256).map(|i| ((i * 13) % 17) as f64 / 17.0).collect()).unwrap();
        let a = forward(&w, &x, true, 8).unwrap();
        let b = forward(&w64, &x, true, 8).unwrap();
        for (p, q) in a.mu.data().iter().zip(b.mu.data()) {
            assert!((p - q).abs() < 1e-5);
        }
    }
}
