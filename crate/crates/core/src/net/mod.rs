//! Encoder-decoder segmentation network with skip connections.
//!
//! Encoder stage `s` applies two 3×3 conv + ReLU layers at width
//! `base · 2^s`, keeps the result as a skip and max-pools it. The bottleneck
//! runs two more conv + ReLU layers at `base · 2^depth`. Each decoder stage
//! upsamples (nearest neighbour), applies one conv + ReLU, concatenates the
//! skip(s) of the matching encoder stage and fuses with two conv + ReLU
//! layers. A 1×1 head produces per-class logits and a per-cell softmax gives
//! the probability map.
//!
//! The dual variant runs a second encoder over the page image. Its pooled
//! output is concatenated with the main encoder's before the bottleneck, and
//! both encoders' skips are concatenated into every decoder stage.

pub mod tensor;

use crate::grid::GridTensor;
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use tensor::{
    add_in_place, concat, conv_backward, conv_forward, maxpool2, maxpool2_backward, relu_backward,
    split, upsample2, upsample2_backward, Act,
};
use thiserror::Error;

pub use tensor::Scalar;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Single,
    Dual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub variant: Variant,
    pub in_channels_main: usize,
    /// Channels of the image encoder input; only used by the dual variant.
    pub in_channels_aux: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub num_classes: usize,
}

/// One convolution of the architecture: `(cout, cin, k, k)` weights plus bias.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl ConvSpec {
    pub fn param_count(&self) -> usize {
        self.cout * self.cin * self.k * self.k + self.cout
    }
}

/// Index of every convolution in [`ArchConfig::conv_specs`] order.
#[derive(Debug, Clone)]
struct Layout {
    /// `[encoder][stage][0|1]`
    enc: Vec<Vec<[usize; 2]>>,
    bottleneck: [usize; 2],
    /// `[stage][up|fuse1|fuse2]`, indexed by stage (not by execution order).
    dec: Vec<[usize; 3]>,
    head: usize,
}

impl ArchConfig {
    pub fn single(in_channels: usize, num_classes: usize) -> Self {
        ArchConfig {
            variant: Variant::Single,
            in_channels_main: in_channels,
            in_channels_aux: 0,
            base_channels: 16,
            depth: 3,
            num_classes,
        }
    }

    pub fn dual(in_channels: usize, num_classes: usize) -> Self {
        ArchConfig {
            variant: Variant::Dual,
            in_channels_main: in_channels,
            in_channels_aux: 3,
            base_channels: 16,
            depth: 3,
            num_classes,
        }
    }

    pub fn with_base(mut self, base: usize) -> Self {
        self.base_channels = base;
        self
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::InvalidArch(m));
        if self.depth < 1 {
            return bad("depth must be at least 1".into());
        }
        if self.depth > 16 {
            return bad(format!("depth {} is unreasonably large", self.depth));
        }
        if self.base_channels < 4 {
            return bad(format!("base_channels {} < 4", self.base_channels));
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes {} < 2", self.num_classes));
        }
        if self.in_channels_main == 0 {
            return bad("main input needs at least one channel".into());
        }
        if self.variant == Variant::Dual && self.in_channels_aux == 0 {
            return bad("dual variant needs aux input channels".into());
        }
        Ok(())
    }

    pub fn encoders(&self) -> usize {
        match self.variant {
            Variant::Single => 1,
            Variant::Dual => 2,
        }
    }

    pub fn width(&self, stage: usize) -> usize {
        self.base_channels << stage
    }

    /// All convolutions in parameter order.
    pub fn conv_specs(&self) -> Vec<ConvSpec> {
        let mut specs = Vec::new();
        let conv = |name: String, cin, cout, k| ConvSpec { name, cin, cout, k };
        let prefixes = ["enc", "aux"];
        let inputs = [self.in_channels_main, self.in_channels_aux];
        for e in 0..self.encoders() {
            let mut cin = inputs[e];
            for s in 0..self.depth {
                let w = self.width(s);
                specs.push(conv(format!("{}.s{s}.conv1", prefixes[e]), cin, w, 3));
                specs.push(conv(format!("{}.s{s}.conv2", prefixes[e]), w, w, 3));
                cin = w;
            }
        }
        let wb = self.width(self.depth);
        let bin = self.width(self.depth - 1) * self.encoders();
        specs.push(conv("bottleneck.conv1".into(), bin, wb, 3));
        specs.push(conv("bottleneck.conv2".into(), wb, wb, 3));
        for s in (0..self.depth).rev() {
            let w = self.width(s);
            specs.push(conv(format!("dec.s{s}.up"), self.width(s + 1), w, 3));
            specs.push(conv(format!("dec.s{s}.fuse1"), w * (1 + self.encoders()), w, 3));
            specs.push(conv(format!("dec.s{s}.fuse2"), w, w, 3));
        }
        specs.push(conv("head".into(), self.width(0), self.num_classes, 1));
        specs
    }

    fn layout(&self) -> Layout {
        let mut i = 0;
        let mut next = || {
            i += 1;
            i - 1
        };
        let enc = (0..self.encoders())
            .map(|_| (0..self.depth).map(|_| [next(), next()]).collect())
            .collect();
        let bottleneck = [next(), next()];
        let mut dec = vec![[0; 3]; self.depth];
        for s in (0..self.depth).rev() {
            dec[s] = [next(), next(), next()];
        }
        Layout {
            enc,
            bottleneck,
            dec,
            head: next(),
        }
    }
}

/// Exact number of scalar parameters.
pub fn param_count(arch: &ArchConfig) -> usize {
    arch.conv_specs().iter().map(ConvSpec::param_count).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Named parameter tensors: weight then bias for each convolution, in
/// [`ArchConfig::conv_specs`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T = f32> {
    pub tensors: Vec<ParamTensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn zeros(arch: &ArchConfig) -> Self {
        let mut tensors = Vec::new();
        for c in arch.conv_specs() {
            tensors.push(ParamTensor {
                name: format!("{}.weight", c.name),
                shape: vec![c.cout, c.cin, c.k, c.k],
                data: vec![T::zero(); c.cout * c.cin * c.k * c.k],
            });
            tensors.push(ParamTensor {
                name: format!("{}.bias", c.name),
                shape: vec![c.cout],
                data: vec![T::zero(); c.cout],
            });
        }
        ParamSet { tensors }
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: vec![T::zero(); t.data.len()],
                })
                .collect(),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn same_shape<U>(&self, other: &ParamSet<U>) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape == b.shape && a.data.len() == b.data.len())
    }

    pub fn check_arch(&self, arch: &ArchConfig) -> Result<(), NetError> {
        let expected = ParamSet::<T>::zeros(arch);
        if !self.same_shape(&expected) {
            return Err(NetError::ShapeMismatch(
                "parameter set does not match architecture".into(),
            ));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamSet<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x = *x + y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in &mut self.tensors {
            for v in &mut t.data {
                *v = *v * factor;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Flat view over all scalars, in tensor order.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.tensors.iter().flat_map(|t| t.data.iter())
    }

    pub fn get_flat(&self, mut i: usize) -> T {
        for t in &self.tensors {
            if i < t.data.len() {
                return t.data[i];
            }
            i -= t.data.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_flat(&mut self, mut i: usize, v: T) {
        for t in &mut self.tensors {
            if i < t.data.len() {
                t.data[i] = v;
                return;
            }
            i -= t.data.len();
        }
        panic!("parameter index out of range");
    }

    /// Name of the tensor that owns flat index `i`.
    pub fn name_of_flat(&self, mut i: usize) -> &str {
        for t in &self.tensors {
            if i < t.data.len() {
                return &t.name;
            }
            i -= t.data.len();
        }
        panic!("parameter index out of range");
    }

    fn weight(&self, conv: usize) -> &[T] {
        &self.tensors[2 * conv].data
    }

    fn bias(&self, conv: usize) -> &[T] {
        &self.tensors[2 * conv + 1].data
    }
}

/// He-uniform kernels (bound `sqrt(6 / fan_in)`), zero biases.
pub fn init_params(arch: &ArchConfig, seed: u64) -> ParamSet<f32> {
    let mut params = ParamSet::<f32>::zeros(arch);
    let mut rng = Rng::with_stream(seed, 0x1A17);
    for (i, c) in arch.conv_specs().iter().enumerate() {
        let bound = (6.0 / (c.cin * c.k * c.k) as f64).sqrt();
        for v in &mut params.tensors[2 * i].data {
            *v = (rng.next_signed() * bound) as f32;
        }
    }
    params
}

/// Per-cell class probabilities, `(H, W, K+1)` with classes fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap<T = f32> {
    pub rows: usize,
    pub cols: usize,
    pub classes: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> ProbMap<T> {
    pub fn cell(&self, r: usize, c: usize) -> &[T] {
        let i = (r * self.cols + c) * self.classes;
        &self.data[i..i + self.classes]
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }
}

/// Network input converted to channel-major layout.
#[derive(Debug, Clone)]
pub struct NetInput<T> {
    pub main: Act<T>,
    pub aux: Option<Act<T>>,
}

impl<T: Scalar> NetInput<T> {
    pub fn from_grids(main: &GridTensor, aux: Option<&GridTensor>) -> Self {
        NetInput {
            main: Act::from_hwc(main.rows, main.cols, main.channels, &main.data),
            aux: aux.map(|a| Act::from_hwc(a.rows, a.cols, a.channels, &a.data)),
        }
    }
}

/// Input and post-activation output of one convolution.
#[derive(Debug, Clone)]
struct ConvRecord<T> {
    input: Act<T>,
    output: Act<T>,
}

#[derive(Debug, Clone)]
struct EncoderStageCache<T> {
    convs: [ConvRecord<T>; 2],
    pool_idx: Vec<u32>,
}

#[derive(Debug, Clone)]
struct DecoderStageCache<T> {
    up: ConvRecord<T>,
    fuse1: ConvRecord<T>,
    fuse2: ConvRecord<T>,
}

/// Activations recorded by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    arch: ArchConfig,
    encoders: Vec<Vec<EncoderStageCache<T>>>,
    bottleneck: [ConvRecord<T>; 2],
    /// Indexed by stage.
    decoder: Vec<DecoderStageCache<T>>,
    head_input: Act<T>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Which ReLUs are active and which element each max-pool selected.
    /// Two forward passes with equal patterns lie in the same linear piece
    /// of the network.
    pub fn activation_pattern(&self) -> Vec<u32> {
        let mut out = Vec::new();
        let mut push_relu = |rec: &ConvRecord<T>| {
            for chunk in rec.output.data.chunks(32) {
                let bits = chunk
                    .iter()
                    .enumerate()
                    .fold(0u32, |acc, (i, v)| acc | (u32::from(*v > T::zero()) << i));
                out.push(bits);
            }
        };
        for enc in &self.encoders {
            for st in enc {
                st.convs.iter().for_each(&mut push_relu);
            }
        }
        self.bottleneck.iter().for_each(&mut push_relu);
        for st in &self.decoder {
            push_relu(&st.up);
            push_relu(&st.fuse1);
            push_relu(&st.fuse2);
        }
        for enc in &self.encoders {
            for st in enc {
                out.extend_from_slice(&st.pool_idx);
            }
        }
        out
    }
}

fn conv_relu<T: Scalar>(params: &ParamSet<T>, arch_specs: &[ConvSpec], idx: usize, input: Act<T>) -> ConvRecord<T> {
    let spec = &arch_specs[idx];
    let mut output = conv_forward(&input, params.weight(idx), params.bias(idx), spec.cout, spec.k);
    output.relu_in_place();
    ConvRecord { input, output }
}

fn check_input<T: Scalar>(arch: &ArchConfig, input: &NetInput<T>) -> Result<(), NetError> {
    let m = &input.main;
    let div = 1usize << arch.depth;
    if m.c != arch.in_channels_main {
        return Err(NetError::ShapeMismatch(format!(
            "main input has {} channels, architecture expects {}",
            m.c, arch.in_channels_main
        )));
    }
    if m.h == 0 || m.w == 0 || !m.h.is_multiple_of(div) || !m.w.is_multiple_of(div) {
        return Err(NetError::ShapeMismatch(format!(
            "grid {}x{} is not divisible by 2^{}",
            m.h, m.w, arch.depth
        )));
    }
    match (arch.variant, &input.aux) {
        (Variant::Single, Some(_)) => Err(NetError::ShapeMismatch(
            "single-encoder network given an auxiliary input".into(),
        )),
        (Variant::Dual, None) => Err(NetError::ShapeMismatch(
            "dual-encoder network requires an auxiliary input".into(),
        )),
        (Variant::Dual, Some(a)) if a.c != arch.in_channels_aux || a.h != m.h || a.w != m.w => {
            Err(NetError::ShapeMismatch(format!(
                "aux input is {}x{}x{}, expected {}x{}x{}",
                a.h, a.w, a.c, m.h, m.w, arch.in_channels_aux
            )))
        }
        _ => Ok(()),
    }
}

/// Runs the network on channel-major input.
pub fn forward_input<T: Scalar>(
    params: &ParamSet<T>,
    arch: &ArchConfig,
    input: &NetInput<T>,
) -> Result<(ProbMap<T>, ForwardCache<T>), NetError> {
    arch.validate()?;
    params.check_arch(arch)?;
    check_input(arch, input)?;
    let specs = arch.conv_specs();
    let layout = arch.layout();

    let sources: Vec<&Act<T>> = std::iter::once(&input.main).chain(input.aux.as_ref()).collect();
    let mut encoders = Vec::with_capacity(sources.len());
    let mut pooled_outputs = Vec::with_capacity(sources.len());
    for (e, src) in sources.into_iter().enumerate() {
        let mut x = src.clone();
        let mut stages = Vec::with_capacity(arch.depth);
        for s in 0..arch.depth {
            let [i1, i2] = layout.enc[e][s];
            let c1 = conv_relu(params, &specs, i1, x);
            let c2 = conv_relu(params, &specs, i2, c1.output.clone());
            let (pooled, pool_idx) = maxpool2(&c2.output);
            x = pooled;
            stages.push(EncoderStageCache {
                convs: [c1, c2],
                pool_idx,
            });
        }
        encoders.push(stages);
        pooled_outputs.push(x);
    }

    let refs: Vec<&Act<T>> = pooled_outputs.iter().collect();
    let b1 = conv_relu(params, &specs, layout.bottleneck[0], concat(&refs));
    let b2 = conv_relu(params, &specs, layout.bottleneck[1], b1.output.clone());
    let mut z = b2.output.clone();

    let mut decoder: Vec<Option<DecoderStageCache<T>>> = vec![None; arch.depth];
    for s in (0..arch.depth).rev() {
        let [iu, if1, if2] = layout.dec[s];
        let up = conv_relu(params, &specs, iu, upsample2(&z));
        let mut parts: Vec<&Act<T>> = vec![&up.output];
        for enc in &encoders {
            parts.push(&enc[s].convs[1].output);
        }
        let cat = concat(&parts);
        let fuse1 = conv_relu(params, &specs, if1, cat);
        let fuse2 = conv_relu(params, &specs, if2, fuse1.output.clone());
        z = fuse2.output.clone();
        decoder[s] = Some(DecoderStageCache { up, fuse1, fuse2 });
    }

    let head = &specs[layout.head];
    let logits = conv_forward(&z, params.weight(layout.head), params.bias(layout.head), head.cout, 1);
    let probs = softmax_cells(&logits);
    let cache = ForwardCache {
        arch: *arch,
        encoders,
        bottleneck: [b1, b2],
        decoder: decoder.into_iter().map(Option::unwrap).collect(),
        head_input: z,
    };
    Ok((probs, cache))
}

/// Runs the network on `(H, W, C)` grid tensors.
pub fn forward<T: Scalar>(
    params: &ParamSet<T>,
    arch: &ArchConfig,
    input_main: &GridTensor,
    input_aux: Option<&GridTensor>,
) -> Result<(ProbMap<T>, ForwardCache<T>), NetError> {
    forward_input(params, arch, &NetInput::from_grids(input_main, input_aux))
}

/// Forward pass without keeping the cache.
pub fn predict<T: Scalar>(
    params: &ParamSet<T>,
    arch: &ArchConfig,
    input: &NetInput<T>,
) -> Result<ProbMap<T>, NetError> {
    forward_input(params, arch, input).map(|(p, _)| p)
}

/// Numerically stable softmax over the class planes of `(K+1, H, W)` logits.
fn softmax_cells<T: Scalar>(logits: &Act<T>) -> ProbMap<T> {
    let classes = logits.c;
    let hw = logits.plane();
    let mut data = vec![T::zero(); hw * classes];
    for p in 0..hw {
        let row = &mut data[p * classes..(p + 1) * classes];
        let mut max = T::neg_infinity();
        for k in 0..classes {
            let v = logits.data[k * hw + p];
            row[k] = v;
            if v > max {
                max = v;
            }
        }
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    ProbMap {
        rows: logits.h,
        cols: logits.w,
        classes,
        data,
    }
}

struct BackCtx<'a, T> {
    params: &'a ParamSet<T>,
    specs: &'a [ConvSpec],
}

impl<T: Scalar> BackCtx<'_, T> {
    fn conv(&self, idx: usize, input: &Act<T>, grad_out: &Act<T>, grads: &mut ParamSet<T>) -> Act<T> {
        let (gw, rest) = grads.tensors[2 * idx..].split_at_mut(1);
        conv_backward(
            input,
            self.params.weight(idx),
            grad_out,
            self.specs[idx].k,
            &mut gw[0].data,
            &mut rest[0].data,
        )
    }

    fn relu_conv(&self, idx: usize, rec: &ConvRecord<T>, mut grad_out: Act<T>, grads: &mut ParamSet<T>) -> Act<T> {
        relu_backward(&mut grad_out, &rec.output);
        self.conv(idx, &rec.input, &grad_out, grads)
    }
}

/// Backpropagates a gradient with respect to the logits (laid out like the
/// [`ProbMap`], `(H, W, K+1)`) to every parameter.
pub fn backward<T: Scalar>(
    params: &ParamSet<T>,
    arch: &ArchConfig,
    cache: &ForwardCache<T>,
    grad_logits: &[T],
) -> Result<ParamSet<T>, NetError> {
    if cache.arch != *arch {
        return Err(NetError::ShapeMismatch(
            "forward cache was produced by a different architecture".into(),
        ));
    }
    params.check_arch(arch)?;
    let (h, w) = (cache.head_input.h, cache.head_input.w);
    let hw = h * w;
    let classes = arch.num_classes;
    if grad_logits.len() != hw * classes {
        return Err(NetError::ShapeMismatch(format!(
            "logit gradient has {} values, expected {}",
            grad_logits.len(),
            hw * classes
        )));
    }
    let specs = arch.conv_specs();
    let layout = arch.layout();
    let mut grads = params.zeros_like();

    // (H, W, K+1) -> (K+1, H, W)
    let mut g_logits = Act::zeros(classes, h, w);
    for p in 0..hw {
        for k in 0..classes {
            g_logits.data[k * hw + p] = grad_logits[p * classes + k];
        }
    }

    let ctx = BackCtx { params, specs: &specs };

    let mut g = ctx.conv(layout.head, &cache.head_input, &g_logits, &mut grads);

    let n_enc = arch.encoders();
    // gradients flowing into each encoder's skip at each stage
    let mut skip_grads: Vec<Vec<Option<Act<T>>>> = vec![vec![None; arch.depth]; n_enc];
    for s in 0..arch.depth {
        let [iu, if1, if2] = layout.dec[s];
        let st = &cache.decoder[s];
        let g_f1 = ctx.relu_conv(if2, &st.fuse2, g, &mut grads);
        let g_cat = ctx.relu_conv(if1, &st.fuse1, g_f1, &mut grads);
        let width = arch.width(s);
        let mut parts = split(&g_cat, &vec![width; 1 + n_enc]).into_iter();
        let g_up = parts.next().unwrap();
        for (e, part) in parts.enumerate() {
            skip_grads[e][s] = Some(part);
        }
        let g_upsampled = ctx.relu_conv(iu, &st.up, g_up, &mut grads);
        g = upsample2_backward(&g_upsampled);
    }

    let g_b1 = ctx.relu_conv(layout.bottleneck[1], &cache.bottleneck[1], g, &mut grads);
    let g_in = ctx.relu_conv(layout.bottleneck[0], &cache.bottleneck[0], g_b1, &mut grads);
    let pooled_width = arch.width(arch.depth - 1);
    let pooled_grads = split(&g_in, &vec![pooled_width; n_enc]);

    for (e, mut g_pool) in pooled_grads.into_iter().enumerate() {
        for s in (0..arch.depth).rev() {
            let st = &cache.encoders[e][s];
            let out = &st.convs[1].output;
            let mut g_skip = maxpool2_backward(&g_pool, &st.pool_idx, out.c, out.h, out.w);
            add_in_place(&mut g_skip, skip_grads[e][s].as_ref().unwrap());
            let [i1, i2] = layout.enc[e][s];
            let g_c1 = ctx.relu_conv(i2, &st.convs[1], g_skip, &mut grads);
            g_pool = ctx.relu_conv(i1, &st.convs[0], g_c1, &mut grads);
        }
    }
    Ok(grads)
}
