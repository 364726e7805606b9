//! Conv-TasNet style separator with optional class conditioning.
//!
//! Pipeline: encoder (strided conv + ReLU) → global layer norm → bottleneck
//! → `R` repeats of `X` dilated residual blocks → mask head (PReLU, pointwise
//! conv, sigmoid) → masked encoder features → overlap-add decoder. For the
//! conditioned variant the bottleneck stream is multiplied elementwise by the
//! class embedding after the configured repeat.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, TrunkConfig};
use super::ops::{self, GlnCache};
use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::signal::ClassVector;

const INIT_TAG: u64 = 0x1417;
const PRELU_INIT: f64 = 0.25;

/// Name, shape and location of one parameter tensor in the flat buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Copy, Debug)]
struct Slot {
    offset: usize,
    len: usize,
}

impl Slot {
    fn get<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.offset..self.offset + self.len]
    }

    fn get_mut<'a>(&self, p: &'a mut [f64]) -> &'a mut [f64] {
        &mut p[self.offset..self.offset + self.len]
    }

    fn scalar(&self, p: &[f64]) -> f64 {
        p[self.offset]
    }
}

#[derive(Clone, Debug)]
struct BlockSlots {
    in_w: Slot,
    in_b: Slot,
    prelu1: Slot,
    ln1_g: Slot,
    ln1_b: Slot,
    dw_w: Slot,
    dw_b: Slot,
    prelu2: Slot,
    ln2_g: Slot,
    ln2_b: Slot,
    out_w: Slot,
    out_b: Slot,
    dilation: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    specs: Vec<ParamSpec>,
    total: usize,
    enc_w: Slot,
    ln0_g: Slot,
    ln0_b: Slot,
    bott_w: Slot,
    bott_b: Slot,
    blocks: Vec<BlockSlots>,
    embed: Option<Slot>,
    proj: Option<Slot>,
    mask_prelu: Slot,
    mask_w: Slot,
    mask_b: Slot,
    dec_w: Slot,
}

#[derive(Clone, Copy)]
enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    Uniform(usize),
    Const(f64),
    Normal(f64),
}

struct LayoutBuilder {
    specs: Vec<ParamSpec>,
    inits: Vec<Init>,
    total: usize,
}

impl LayoutBuilder {
    fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> Slot {
        let len = shape.iter().product();
        let slot = Slot {
            offset: self.total,
            len,
        };
        self.specs.push(ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.total,
            len,
        });
        self.inits.push(init);
        self.total += len;
        slot
    }
}

fn build_layout(config: &ModelConfig) -> (Layout, Vec<Init>) {
    let t = config.trunk();
    let (n, b, h, p) = (
        t.encoder_filters,
        t.bottleneck_channels,
        t.conv_channels,
        t.kernel_size,
    );
    let mut lb = LayoutBuilder {
        specs: Vec::new(),
        inits: Vec::new(),
        total: 0,
    };
    let enc_w = lb.add("encoder.weight", &[n, t.frame_length], Init::Uniform(t.frame_length));
    let ln0_g = lb.add("separator.norm.gain", &[n], Init::Const(1.0));
    let ln0_b = lb.add("separator.norm.bias", &[n], Init::Const(0.0));
    let bott_w = lb.add("separator.bottleneck.weight", &[b, n], Init::Uniform(n));
    let bott_b = lb.add("separator.bottleneck.bias", &[b], Init::Const(0.0));
    let mut blocks = Vec::new();
    for r in 0..t.repeats {
        for x in 0..t.blocks_per_repeat {
            let pre = format!("separator.repeat{r}.block{x}");
            blocks.push(BlockSlots {
                in_w: lb.add(format!("{pre}.in.weight"), &[h, b], Init::Uniform(b)),
                in_b: lb.add(format!("{pre}.in.bias"), &[h], Init::Const(0.0)),
                prelu1: lb.add(format!("{pre}.prelu1"), &[1], Init::Const(PRELU_INIT)),
                ln1_g: lb.add(format!("{pre}.norm1.gain"), &[h], Init::Const(1.0)),
                ln1_b: lb.add(format!("{pre}.norm1.bias"), &[h], Init::Const(0.0)),
                dw_w: lb.add(format!("{pre}.depthwise.weight"), &[h, p], Init::Uniform(p)),
                dw_b: lb.add(format!("{pre}.depthwise.bias"), &[h], Init::Const(0.0)),
                prelu2: lb.add(format!("{pre}.prelu2"), &[1], Init::Const(PRELU_INIT)),
                ln2_g: lb.add(format!("{pre}.norm2.gain"), &[h], Init::Const(1.0)),
                ln2_b: lb.add(format!("{pre}.norm2.bias"), &[h], Init::Const(0.0)),
                out_w: lb.add(format!("{pre}.out.weight"), &[b, h], Init::Uniform(h)),
                out_b: lb.add(format!("{pre}.out.bias"), &[b], Init::Const(0.0)),
                dilation: 1 << x,
            });
        }
    }
    let (embed, proj) = match config.conditioning() {
        Some(sel) => {
            let d = sel.embedding_dim;
            let embed = lb.add(
                "embedding.table",
                &[sel.num_classes, d],
                Init::Normal(1.0 / (d as f64).sqrt()),
            );
            let proj = (d != b).then(|| lb.add("embedding.projection", &[b, d], Init::Uniform(d)));
            (Some(embed), proj)
        }
        None => (None, None),
    };
    let k = config.num_outputs();
    let mask_prelu = lb.add("mask.prelu", &[1], Init::Const(PRELU_INIT));
    let mask_w = lb.add("mask.weight", &[k * n, b], Init::Uniform(b));
    let mask_b = lb.add("mask.bias", &[k * n], Init::Const(0.0));
    let dec_w = lb.add("decoder.weight", &[n, t.frame_length], Init::Uniform(n));
    let layout = Layout {
        specs: lb.specs,
        total: lb.total,
        enc_w,
        ln0_g,
        ln0_b,
        bott_w,
        bott_b,
        blocks,
        embed,
        proj,
        mask_prelu,
        mask_w,
        mask_b,
        dec_w,
    };
    (layout, lb.inits)
}

/// Network weights together with the configuration that shapes them.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
}

struct BlockCache {
    x_in: Vec<f64>,
    a1: Vec<f64>,
    ln1: GlnCache,
    n1: Vec<f64>,
    a2: Vec<f64>,
    ln2: GlnCache,
    n2: Vec<f64>,
}

/// Intermediate activations recorded by a training forward pass.
pub(crate) struct Tape {
    len: usize,
    frames: usize,
    enc_frames: Vec<f64>,
    enc_out: Vec<f64>,
    ln0: GlnCache,
    n0: Vec<f64>,
    blocks: Vec<BlockCache>,
    pre_integration: Option<Vec<f64>>,
    class_weights: Option<Vec<f64>>,
    embedding: Option<Vec<f64>>,
    conditioning: Option<Vec<f64>>,
    head_in: Vec<f64>,
    head_act: Vec<f64>,
    masks: Vec<f64>,
    masked: Vec<Vec<f64>>,
}

impl Model {
    /// Randomly initialised model, deterministic in `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, inits) = build_layout(&config);
        let mut rng = derive_rng(seed, &[INIT_TAG]);
        let mut params = vec![0.0; layout.total];
        for (spec, init) in layout.specs.iter().zip(inits) {
            let dst = &mut params[spec.offset..spec.offset + spec.len];
            match init {
                Init::Const(v) => dst.fill(v),
                Init::Uniform(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    dst.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
                }
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("positive std");
                    dst.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
                }
            }
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    /// Wraps an existing parameter vector.
    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let (layout, _) = build_layout(&config);
        if params.len() != layout.total {
            return Err(Error::invalid(format!(
                "parameter vector has {} values, configuration needs {}",
                params.len(),
                layout.total
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("parameters contain non-finite values"));
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn trunk(&self) -> &TrunkConfig {
        self.config.trunk()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.layout.specs
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.config.conditioning().map(|c| c.num_classes)
    }

    /// The class embedding table as `num_classes` rows of `embedding_dim`.
    pub fn embedding_table(&self) -> Option<&[f64]> {
        self.layout.embed.map(|s| s.get(&self.params))
    }

    pub(crate) fn check_class_vector(&self, o: &ClassVector) -> Result<()> {
        let n = self
            .num_classes()
            .ok_or_else(|| Error::invalid("this model takes no target-class vector"))?;
        if o.num_classes() != n {
            return Err(Error::invalid(format!(
                "class vector has {} entries but the model was built for {n} classes",
                o.num_classes()
            )));
        }
        o.require_selection()
    }

    /// `c = Σ_n o_n e_n`, before any projection to the bottleneck width.
    pub(crate) fn embedding_sum(&self, o: &ClassVector) -> Result<Vec<f64>> {
        self.check_class_vector(o)?;
        let sel = self.config.conditioning().expect("checked above");
        let table = self.embedding_table().expect("conditioned model has a table");
        let d = sel.embedding_dim;
        let mut c = vec![0.0; d];
        for n in o.support() {
            for (acc, e) in c.iter_mut().zip(&table[n * d..(n + 1) * d]) {
                *acc += e;
            }
        }
        Ok(c)
    }

    /// Runs the network on raw samples. Returns one signal per output
    /// channel, each as long as the input.
    pub(crate) fn run(
        &self,
        params: &[f64],
        y: &[f64],
        o: Option<&ClassVector>,
        mut tape: Option<&mut Tape>,
    ) -> Result<Vec<Vec<f64>>> {
        let t = self.trunk();
        let lay = &self.layout;
        let (n, b, h, p) = (
            t.encoder_filters,
            t.bottleneck_channels,
            t.conv_channels,
            t.kernel_size,
        );
        let len = y.len();
        let stride = t.stride();
        let frames = ops::frame_count(len, t.frame_length, stride);
        if frames == 0 {
            return Err(Error::invalid(format!(
                "input of {len} samples is shorter than one {}-sample frame",
                t.frame_length
            )));
        }

        let class_weights = match (self.config.conditioning(), o) {
            (Some(_), Some(o)) => {
                self.check_class_vector(o)?;
                Some(o.to_f64())
            }
            (Some(_), None) => return Err(Error::invalid("conditioned model needs a class vector")),
            (None, Some(_)) => return Err(Error::invalid("this model takes no class vector")),
            (None, None) => None,
        };

        // encoder
        let enc_frames = ops::frame_signal(y, t.frame_length, stride, frames);
        let mut w = vec![0.0; n * frames];
        ops::gemm(n, t.frame_length, frames, lay.enc_w.get(params), false, &enc_frames, false, &mut w, false);
        w.iter_mut().for_each(|v| *v = v.max(0.0));

        let (n0, ln0) = ops::gln(&w, lay.ln0_g.get(params), lay.ln0_b.get(params), frames);
        let mut x = ops::conv1x1(lay.bott_w.get(params), lay.bott_b.get(params), &n0, n, b, frames);

        // class conditioning vector at bottleneck width
        let (embedding, conditioning) = match &class_weights {
            Some(weights) => {
                let sel = self.config.conditioning().expect("conditioned");
                let d = sel.embedding_dim;
                let table = lay.embed.expect("table").get(params);
                let mut c = vec![0.0; d];
                for (cls, &wgt) in weights.iter().enumerate() {
                    if wgt != 0.0 {
                        for (acc, e) in c.iter_mut().zip(&table[cls * d..(cls + 1) * d]) {
                            *acc += wgt * e;
                        }
                    }
                }
                let cb = match lay.proj {
                    Some(proj) => {
                        let mut out = vec![0.0; b];
                        ops::gemm(b, d, 1, proj.get(params), false, &c, false, &mut out, false);
                        out
                    }
                    None => c.clone(),
                };
                (Some(c), Some(cb))
            }
            None => (None, None),
        };
        let integrate_at = self
            .config
            .conditioning()
            .map(|s| s.integration_after_repeat * t.blocks_per_repeat);

        let mut block_caches = Vec::new();
        let mut pre_integration = None;
        for (i, blk) in lay.blocks.iter().enumerate() {
            if Some(i) == integrate_at {
                let cb = conditioning.as_ref().expect("conditioned");
                if tape.is_some() {
                    pre_integration = Some(x.clone());
                }
                x = integrate_frames(&x, cb, frames);
            }
            let a1 = ops::conv1x1(blk.in_w.get(params), blk.in_b.get(params), &x, b, h, frames);
            let p1 = ops::prelu(&a1, blk.prelu1.scalar(params));
            let (n1, ln1) = ops::gln(&p1, blk.ln1_g.get(params), blk.ln1_b.get(params), frames);
            drop(p1);
            let a2 = ops::depthwise_conv(&n1, blk.dw_w.get(params), blk.dw_b.get(params), h, frames, p, blk.dilation);
            let p2 = ops::prelu(&a2, blk.prelu2.scalar(params));
            let (n2, ln2) = ops::gln(&p2, blk.ln2_g.get(params), blk.ln2_b.get(params), frames);
            drop(p2);
            let o = ops::conv1x1(blk.out_w.get(params), blk.out_b.get(params), &n2, h, b, frames);
            let x_next: Vec<f64> = x.iter().zip(&o).map(|(u, v)| u + v).collect();
            if tape.is_some() {
                block_caches.push(BlockCache {
                    x_in: std::mem::take(&mut x),
                    a1,
                    ln1,
                    n1,
                    a2,
                    ln2,
                    n2,
                });
            }
            x = x_next;
        }
        if Some(lay.blocks.len()) == integrate_at {
            let cb = conditioning.as_ref().expect("conditioned");
            if tape.is_some() {
                pre_integration = Some(x.clone());
            }
            x = integrate_frames(&x, cb, frames);
        }

        // mask head
        let k_out = self.config.num_outputs();
        let head_act = ops::prelu(&x, lay.mask_prelu.scalar(params));
        let mut masks = ops::conv1x1(lay.mask_w.get(params), lay.mask_b.get(params), &head_act, b, k_out * n, frames);
        masks.iter_mut().for_each(|v| *v = ops::sigmoid(*v));

        let dec_w = lay.dec_w.get(params);
        let mut outputs = Vec::with_capacity(k_out);
        let mut masked_all = Vec::new();
        for k in 0..k_out {
            let m = &masks[k * n * frames..(k + 1) * n * frames];
            let masked: Vec<f64> = w.iter().zip(m).map(|(a, b)| a * b).collect();
            let mut frames_out = vec![0.0; t.frame_length * frames];
            ops::gemm(t.frame_length, n, frames, dec_w, true, &masked, false, &mut frames_out, false);
            outputs.push(ops::overlap_add(&frames_out, t.frame_length, stride, frames, len));
            if tape.is_some() {
                masked_all.push(masked);
            }
        }

        if let Some(tape) = tape.as_deref_mut() {
            *tape = Tape {
                len,
                frames,
                enc_frames,
                enc_out: w,
                ln0,
                n0,
                blocks: block_caches,
                pre_integration,
                class_weights,
                embedding,
                conditioning,
                head_in: x,
                head_act,
                masks,
                masked: masked_all,
            };
        }
        Ok(outputs)
    }

    /// Backpropagates output gradients through a recorded forward pass,
    /// accumulating parameter gradients into `grads`.
    pub(crate) fn backward(&self, params: &[f64], tape: &Tape, d_outputs: &[Vec<f64>], grads: &mut [f64]) {
        let t = self.trunk();
        let lay = &self.layout;
        let (n, b, h, p) = (
            t.encoder_filters,
            t.bottleneck_channels,
            t.conv_channels,
            t.kernel_size,
        );
        let frames = tape.frames;
        let stride = t.stride();
        let k_out = self.config.num_outputs();
        assert_eq!(d_outputs.len(), k_out);

        let dec_w = lay.dec_w.get(params);
        let mut d_enc = vec![0.0; n * frames];
        let mut d_masks = vec![0.0; k_out * n * frames];
        for (k, d_out) in d_outputs.iter().enumerate() {
            assert_eq!(d_out.len(), tape.len);
            let d_frames = ops::frame_signal(d_out, t.frame_length, stride, frames);
            ops::gemm(n, frames, t.frame_length, &tape.masked[k], false, &d_frames, true, lay.dec_w.get_mut(grads), true);
            let mut d_masked = vec![0.0; n * frames];
            ops::gemm(n, t.frame_length, frames, dec_w, false, &d_frames, false, &mut d_masked, false);
            let m = &tape.masks[k * n * frames..(k + 1) * n * frames];
            let dm = &mut d_masks[k * n * frames..(k + 1) * n * frames];
            for i in 0..n * frames {
                dm[i] = d_masked[i] * tape.enc_out[i];
                d_enc[i] += d_masked[i] * m[i];
            }
        }
        for (g, &m) in d_masks.iter_mut().zip(&tape.masks) {
            *g *= m * (1.0 - m);
        }
        let d_head_act = {
            let (dw, db) = split_two(grads, lay.mask_w, lay.mask_b);
            ops::conv1x1_backward(lay.mask_w.get(params), &tape.head_act, &d_masks, b, k_out * n, frames, dw, db)
        };
        let mut dx = ops::prelu_backward(
            &tape.head_in,
            &d_head_act,
            lay.mask_prelu.scalar(params),
            &mut grads[lay.mask_prelu.offset],
        );

        let integrate_at = self
            .config
            .conditioning()
            .map(|s| s.integration_after_repeat * t.blocks_per_repeat);
        let mut d_conditioning = None;
        let apply_integration_backward = |dx: &mut Vec<f64>, d_cond: &mut Option<Vec<f64>>| {
            let cb = tape.conditioning.as_ref().expect("conditioned");
            let x_pre = tape.pre_integration.as_ref().expect("recorded");
            let mut dc = vec![0.0; b];
            for c in 0..b {
                let row = c * frames..(c + 1) * frames;
                let mut acc = 0.0;
                for (g, &xv) in dx[row.clone()].iter_mut().zip(&x_pre[row]) {
                    acc += *g * xv;
                    *g *= cb[c];
                }
                dc[c] = acc;
            }
            *d_cond = Some(dc);
        };
        if Some(lay.blocks.len()) == integrate_at {
            apply_integration_backward(&mut dx, &mut d_conditioning);
        }
        for (i, (blk, cache)) in lay.blocks.iter().zip(&tape.blocks).enumerate().rev() {
            let d_n2 = {
                let (dw, db) = split_two(grads, blk.out_w, blk.out_b);
                ops::conv1x1_backward(blk.out_w.get(params), &cache.n2, &dx, h, b, frames, dw, db)
            };
            let d_p2 = {
                let (dg, db) = split_two(grads, blk.ln2_g, blk.ln2_b);
                ops::gln_backward(&cache.ln2, &d_n2, blk.ln2_g.get(params), frames, dg, db)
            };
            let d_a2 = ops::prelu_backward(&cache.a2, &d_p2, blk.prelu2.scalar(params), &mut grads[blk.prelu2.offset]);
            let d_n1 = {
                let (dw, db) = split_two(grads, blk.dw_w, blk.dw_b);
                ops::depthwise_conv_backward(&cache.n1, blk.dw_w.get(params), &d_a2, h, frames, p, blk.dilation, dw, db)
            };
            let d_p1 = {
                let (dg, db) = split_two(grads, blk.ln1_g, blk.ln1_b);
                ops::gln_backward(&cache.ln1, &d_n1, blk.ln1_g.get(params), frames, dg, db)
            };
            let d_a1 = ops::prelu_backward(&cache.a1, &d_p1, blk.prelu1.scalar(params), &mut grads[blk.prelu1.offset]);
            let d_x_in = {
                let (dw, db) = split_two(grads, blk.in_w, blk.in_b);
                ops::conv1x1_backward(blk.in_w.get(params), &cache.x_in, &d_a1, b, h, frames, dw, db)
            };
            for (g, v) in dx.iter_mut().zip(&d_x_in) {
                *g += v;
            }
            if Some(i) == integrate_at {
                apply_integration_backward(&mut dx, &mut d_conditioning);
            }
        }

        if let Some(dcb) = d_conditioning {
            let sel = self.config.conditioning().expect("conditioned");
            let d = sel.embedding_dim;
            let c = tape.embedding.as_ref().expect("recorded");
            let dc = match lay.proj {
                Some(proj) => {
                    ops::gemm(b, 1, d, &dcb, false, c, false, proj.get_mut(grads), true);
                    let mut dc = vec![0.0; d];
                    ops::gemm(d, b, 1, proj.get(params), true, &dcb, false, &mut dc, false);
                    dc
                }
                None => dcb,
            };
            let weights = tape.class_weights.as_ref().expect("recorded");
            let table_grad = lay.embed.expect("table").get_mut(grads);
            for (cls, &wgt) in weights.iter().enumerate() {
                if wgt != 0.0 {
                    for (g, v) in table_grad[cls * d..(cls + 1) * d].iter_mut().zip(&dc) {
                        *g += wgt * v;
                    }
                }
            }
        }

        let d_n0 = {
            let (dw, db) = split_two(grads, lay.bott_w, lay.bott_b);
            ops::conv1x1_backward(lay.bott_w.get(params), &tape.n0, &dx, n, b, frames, dw, db)
        };
        let d_w_norm = {
            let (dg, db) = split_two(grads, lay.ln0_g, lay.ln0_b);
            ops::gln_backward(&tape.ln0, &d_n0, lay.ln0_g.get(params), frames, dg, db)
        };
        for ((g, v), &w) in d_enc.iter_mut().zip(&d_w_norm).zip(&tape.enc_out) {
            *g = if w > 0.0 { *g + v } else { 0.0 };
        }
        ops::gemm(n, frames, t.frame_length, &d_enc, false, &tape.enc_frames, true, lay.enc_w.get_mut(grads), true);
    }

    /// Forward pass that records activations for [`Model::backward`].
    pub(crate) fn run_recording(&self, y: &[f64], o: Option<&ClassVector>) -> Result<(Vec<Vec<f64>>, Tape)> {
        let mut tape = Tape::empty();
        let out = self.run(&self.params, y, o, Some(&mut tape))?;
        Ok((out, tape))
    }
}

impl Tape {
    fn empty() -> Self {
        Tape {
            len: 0,
            frames: 0,
            enc_frames: Vec::new(),
            enc_out: Vec::new(),
            ln0: GlnCache {
                xhat: Vec::new(),
                inv_std: 0.0,
            },
            n0: Vec::new(),
            blocks: Vec::new(),
            pre_integration: None,
            class_weights: None,
            embedding: None,
            conditioning: None,
            head_in: Vec::new(),
            head_act: Vec::new(),
            masks: Vec::new(),
            masked: Vec::new(),
        }
    }

    pub(crate) fn frames(&self) -> usize {
        self.frames
    }

    /// Bottleneck stream just before the class embedding is applied.
    pub(crate) fn pre_integration_features(&self) -> &[f64] {
        self.pre_integration.as_deref().unwrap_or(&[])
    }
}

/// `z_f = h_f ⊙ c` for every frame of a channel-major map.
pub(crate) fn integrate_frames(h: &[f64], c: &[f64], frames: usize) -> Vec<f64> {
    let mut z = h.to_vec();
    for (row, &cv) in z.chunks_exact_mut(frames).zip(c) {
        row.iter_mut().for_each(|v| *v *= cv);
    }
    z
}

/// Mutable views of two parameter slots, which never overlap.
fn split_two(grads: &mut [f64], a: Slot, b: Slot) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a.offset + a.len <= b.offset || b.offset + b.len <= a.offset);
    if a.offset < b.offset {
        let (lo, hi) = grads.split_at_mut(b.offset);
        (&mut lo[a.offset..a.offset + a.len], &mut hi[..b.len])
    } else {
        let (lo, hi) = grads.split_at_mut(a.offset);
        let bslice = &mut lo[b.offset..b.offset + b.len];
        (&mut hi[..a.len], bslice)
    }
}
