use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{self, BnCache, ConvShape};
use super::{Adam, EpisodeSample, NetConfig, NetError};

/// A named slice of the flat parameter (or buffer) store.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl Segment {
    fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Clone, Debug, PartialEq)]
struct BnUnit {
    gamma: Range<usize>,
    beta: Range<usize>,
    mean: Range<usize>,
    var: Range<usize>,
}

/// conv → (batchnorm) → (+ input) → ReLU
#[derive(Clone, Debug, PartialEq)]
struct ConvUnit {
    shape: ConvShape,
    w: Range<usize>,
    b: Option<Range<usize>>,
    bn: Option<BnUnit>,
    residual: bool,
}

#[derive(Clone, Debug, PartialEq)]
struct DenseUnit {
    nin: usize,
    nout: usize,
    w: Range<usize>,
    b: Range<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub(super) struct Layout {
    trunk: Vec<ConvUnit>,
    policy_conv: ConvUnit,
    policy_fc: DenseUnit,
    value_conv: ConvUnit,
    value_fc1: DenseUnit,
    value_fc2: DenseUnit,
}

pub(super) struct Builder {
    pub(super) segments: Vec<Segment>,
    pub(super) buffers: Vec<Segment>,
    pub(super) params: usize,
    pub(super) buffer_len: usize,
}

impl Builder {
    fn param(&mut self, name: String, len: usize) -> Range<usize> {
        let r = self.params..self.params + len;
        self.segments.push(Segment { name, offset: self.params, len });
        self.params += len;
        r
    }

    fn buffer(&mut self, name: String, len: usize) -> Range<usize> {
        let r = self.buffer_len..self.buffer_len + len;
        self.buffers.push(Segment { name, offset: self.buffer_len, len });
        self.buffer_len += len;
        r
    }

    fn conv(&mut self, cfg: &NetConfig, name: &str, cin: usize, cout: usize, kernel: usize, residual: bool) -> ConvUnit {
        let shape = ConvShape { cin, cout, kernel, height: cfg.board, width: cfg.board };
        let w = self.param(format!("{name}.conv.weight"), shape.weight_len());
        let (b, bn) = if cfg.use_batchnorm {
            let bn = BnUnit {
                gamma: self.param(format!("{name}.bn.gamma"), cout),
                beta: self.param(format!("{name}.bn.beta"), cout),
                mean: self.buffer(format!("{name}.bn.running_mean"), cout),
                var: self.buffer(format!("{name}.bn.running_var"), cout),
            };
            (None, Some(bn))
        } else {
            (Some(self.param(format!("{name}.conv.bias"), cout)), None)
        };
        ConvUnit { shape, w, b, bn, residual }
    }

    fn dense(&mut self, name: &str, nin: usize, nout: usize) -> DenseUnit {
        DenseUnit {
            nin,
            nout,
            w: self.param(format!("{name}.weight"), nin * nout),
            b: self.param(format!("{name}.bias"), nout),
        }
    }
}

pub(super) fn build_layout(cfg: &NetConfig) -> (Layout, Builder) {
    let mut b = Builder { segments: Vec::new(), buffers: Vec::new(), params: 0, buffer_len: 0 };
    let plane = cfg.board * cfg.board;
    let mut trunk = vec![b.conv(cfg, "stem", cfg.channels, cfg.filters, cfg.kernel, false)];
    for i in 0..cfg.conv_blocks {
        trunk.push(b.conv(cfg, &format!("block{i}"), cfg.filters, cfg.filters, cfg.kernel, cfg.use_residual));
    }
    let policy_conv = b.conv(cfg, "policy", cfg.filters, 2, 1, false);
    let policy_fc = b.dense("policy.fc", 2 * plane, plane);
    let value_conv = b.conv(cfg, "value", cfg.filters, 1, 1, false);
    let value_fc1 = b.dense("value.fc1", plane, cfg.value_head_hidden);
    let value_fc2 = b.dense("value.fc2", cfg.value_head_hidden, 1);
    (Layout { trunk, policy_conv, policy_fc, value_conv, value_fc1, value_fc2 }, b)
}

#[derive(Default)]
struct UnitCache {
    input: Vec<f64>,
    bn: Option<BnCache>,
    pre: Vec<f64>,
}

/// Activations kept by a training-mode forward pass.
struct Cache {
    batch: usize,
    trunk: Vec<UnitCache>,
    policy: UnitCache,
    policy_feat: Vec<f64>,
    value: UnitCache,
    value_feat: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
}

/// How batchnorm normalizes during a forward pass.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Norm {
    /// Running averages.
    Inference,
    /// Batch statistics, leaving the running averages alone.
    Batch,
    /// Batch statistics, folding them into the running averages.
    BatchAndTrack,
}

/// Policy/value network with its optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyValueNet {
    config: NetConfig,
    params: Vec<f64>,
    segments: Vec<Segment>,
    buffers: Vec<f64>,
    buffer_segments: Vec<Segment>,
    adam: Adam,
    layout: Layout,
}

impl PolicyValueNet {
    /// He-initialized network; batchnorm scales start at 1 and shifts at 0.
    pub fn new(config: NetConfig) -> Result<Self, NetError> {
        let mut net = Self::zeros(config)?;
        let layout = net.layout.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(net.config.weight_init_seed);
        let mut he = |p: &mut [f64], fan_in: usize| {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            p.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
        };
        let convs = layout.trunk.iter().chain([&layout.policy_conv, &layout.value_conv]);
        for unit in convs {
            he(&mut net.params[unit.w.clone()], unit.shape.patch());
            if let Some(bn) = &unit.bn {
                net.params[bn.gamma.clone()].fill(1.0);
            }
        }
        he(&mut net.params[layout.value_fc1.w.clone()], layout.value_fc1.nin);
        // Output layers start at zero: uniform priors and a constant value.
        Ok(net)
    }

    /// Every parameter zero: the policy is uniform over valid actions and the
    /// value is the output bias.
    pub fn zeros(config: NetConfig) -> Result<Self, NetError> {
        config.validate()?;
        let (layout, b) = build_layout(&config);
        let mut buffers = vec![0.0; b.buffer_len];
        for unit in layout.trunk.iter().chain([&layout.policy_conv, &layout.value_conv]) {
            if let Some(bn) = &unit.bn {
                buffers[bn.var.clone()].fill(1.0);
            }
        }
        Ok(Self {
            adam: Adam::new(b.params),
            params: vec![0.0; b.params],
            segments: b.segments,
            buffers,
            buffer_segments: b.buffers,
            config,
            layout,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn buffers(&self) -> &[f64] {
        &self.buffers
    }

    pub fn buffer_segments(&self) -> &[Segment] {
        &self.buffer_segments
    }

    pub fn adam(&self) -> &Adam {
        &self.adam
    }

    pub(super) fn from_parts(config: NetConfig, params: Vec<f64>, buffers: Vec<f64>, adam: Adam) -> Result<Self, NetError> {
        let mut net = Self::zeros(config)?;
        let check = |what, expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(NetError::Mismatch(format!("{what}: expected {expected} values, found {got}")))
            }
        };
        check("parameters", net.params.len(), params.len())?;
        check("buffers", net.buffers.len(), buffers.len())?;
        check("adam first moment", net.params.len(), adam.m.len())?;
        check("adam second moment", net.params.len(), adam.v.len())?;
        net.params = params;
        net.buffers = buffers;
        net.adam = adam;
        Ok(net)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Name of the segment holding parameter `index`.
    pub fn segment_of(&self, index: usize) -> Option<&str> {
        self.segments.iter().find(|s| s.range().contains(&index)).map(|s| s.name.as_str())
    }

    fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), NetError> {
        if expected == got {
            Ok(())
        } else {
            Err(NetError::Shape { what, expected, got })
        }
    }

    /// Masked policy and value for one encoded state, in inference mode.
    pub fn forward(&self, encoded_state: &[f64], valid_mask: &[bool]) -> Result<(Vec<f64>, f64), NetError> {
        let (p, v) = self.forward_batch(encoded_state, valid_mask, 1)?;
        Ok((p, v[0]))
    }

    /// Inference over `batch` states laid out back to back.
    pub fn forward_batch(&self, inputs: &[f64], masks: &[bool], batch: usize) -> Result<(Vec<f64>, Vec<f64>), NetError> {
        let a = self.config.policy_head_dim();
        Self::check_len("encoded states", batch * self.config.input_len(), inputs.len())?;
        Self::check_len("valid masks", batch * a, masks.len())?;
        let layout = &self.layout;
        let (logits, values, _) = run_forward(&self.config, layout, &self.params, &self.buffers, None, inputs, batch, Norm::Inference);
        let mut policy = vec![0.0; batch * a];
        for b in 0..batch {
            let r = b * a..(b + 1) * a;
            ops::masked_softmax(&logits[r.clone()], &masks[r.clone()], &mut policy[r]);
        }
        if !values.iter().chain(&policy).all(|v| v.is_finite()) {
            return Err(NetError::NonFiniteOutput);
        }
        Ok((policy, values))
    }

    fn stack(&self, batch: &[EpisodeSample]) -> Result<(Vec<f64>, Vec<bool>), NetError> {
        if batch.is_empty() {
            return Err(NetError::EmptyBatch);
        }
        let a = self.config.policy_head_dim();
        let mut inputs = Vec::with_capacity(batch.len() * self.config.input_len());
        let mut masks = Vec::with_capacity(batch.len() * a);
        for s in batch {
            Self::check_len("encoded state", self.config.input_len(), s.encoded_state.len())?;
            Self::check_len("valid mask", a, s.valid_mask.len())?;
            Self::check_len("target policy", a, s.target_policy.len())?;
            inputs.extend_from_slice(&s.encoded_state);
            masks.extend_from_slice(&s.valid_mask);
        }
        Ok((inputs, masks))
    }

    /// Mean over the batch of squared value error plus policy cross-entropy,
    /// plus `l2·‖Θ‖²`. Batchnorm uses batch statistics, as during training.
    pub fn loss(&self, batch: &[EpisodeSample]) -> Result<f64, NetError> {
        let (inputs, masks) = self.stack(batch)?;
        let layout = &self.layout;
        let (logits, values, _) = run_forward(&self.config, layout, &self.params, &self.buffers, None, &inputs, batch.len(), Norm::Batch);
        Ok(self.loss_terms(batch, &logits, &values, &masks, None))
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, batch: &[EpisodeSample]) -> Result<(f64, Vec<f64>), NetError> {
        let (inputs, masks) = self.stack(batch)?;
        let layout = &self.layout;
        let (logits, values, cache) = run_forward(&self.config, layout, &self.params, &self.buffers, None, &inputs, batch.len(), Norm::Batch);
        self.gradient(batch, layout, &logits, &values, &masks, cache.expect("training cache"))
    }

    fn gradient(
        &self,
        batch: &[EpisodeSample],
        layout: &Layout,
        logits: &[f64],
        values: &[f64],
        masks: &[bool],
        cache: Cache,
    ) -> Result<(f64, Vec<f64>), NetError> {
        let a = self.config.policy_head_dim();
        let mut dlogits = vec![0.0; logits.len()];
        let loss = self.loss_terms(batch, logits, values, masks, Some(&mut dlogits));
        let scale = 1.0 / batch.len() as f64;
        let dvalues: Vec<f64> = values.iter().zip(batch).map(|(v, s)| 2.0 * (v - s.target_value) * scale).collect();
        let mut grads = vec![0.0; self.params.len()];
        run_backward(layout, &self.params, &cache, &dlogits, &dvalues, &mut grads);
        let l2 = self.config.l2;
        if l2 > 0.0 {
            for (g, p) in grads.iter_mut().zip(&self.params) {
                *g += 2.0 * l2 * p;
            }
        }
        debug_assert_eq!(dlogits.len(), batch.len() * a);
        for seg in &self.segments {
            if !grads[seg.range()].iter().all(|g| g.is_finite()) {
                return Err(NetError::NonFiniteGradient { segment: seg.name.clone() });
            }
        }
        Ok((loss, grads))
    }

    fn loss_terms(
        &self,
        batch: &[EpisodeSample],
        logits: &[f64],
        values: &[f64],
        masks: &[bool],
        mut dlogits: Option<&mut [f64]>,
    ) -> f64 {
        let a = self.config.policy_head_dim();
        let scale = 1.0 / batch.len() as f64;
        let mut p = vec![0.0; a];
        let mut scratch = vec![0.0; a];
        let mut total = 0.0;
        for (b, s) in batch.iter().enumerate() {
            let r = b * a..(b + 1) * a;
            ops::masked_softmax(&logits[r.clone()], &masks[r.clone()], &mut p);
            let d = match dlogits.as_deref_mut() {
                Some(d) => &mut d[r.clone()],
                None => &mut scratch[..],
            };
            let ce = ops::policy_cross_entropy(&p, &s.target_policy, &masks[r], scale, d);
            let dv = values[b] - s.target_value;
            total += dv * dv + ce;
        }
        let l2: f64 = self.params.iter().map(|p| p * p).sum::<f64>() * self.config.l2;
        total * scale + l2
    }

    /// One Adam step on `batch`; returns the loss before the update.
    pub fn train_step(&mut self, batch: &[EpisodeSample], learning_rate: f64) -> Result<f64, NetError> {
        let (inputs, masks) = self.stack(batch)?;
        let layout = &self.layout;
        let mut buffers = self.buffers.clone();
        let (logits, values, cache) = run_forward(
            &self.config,
            layout,
            &self.params,
            &self.buffers,
            Some(&mut buffers),
            &inputs,
            batch.len(),
            Norm::BatchAndTrack,
        );
        let (loss, grads) = self.gradient(batch, layout, &logits, &values, &masks, cache.expect("training cache"))?;
        let mut params = self.params.clone();
        let mut adam = self.adam.clone();
        adam.update(&mut params, &grads, learning_rate);
        for seg in &self.segments {
            if !params[seg.range()].iter().all(|g| g.is_finite()) {
                return Err(NetError::NonFiniteParameter { segment: seg.name.clone() });
            }
        }
        self.params = params;
        self.adam = adam;
        self.buffers = buffers;
        Ok(loss)
    }
}

fn unit_forward(
    cfg: &NetConfig,
    unit: &ConvUnit,
    params: &[f64],
    running: &[f64],
    track: Option<&mut [f64]>,
    input: Vec<f64>,
    batch: usize,
    norm: Norm,
) -> (Vec<f64>, Option<UnitCache>) {
    let keep = norm != Norm::Inference;
    let s = &unit.shape;
    let mut z = vec![0.0; batch * s.out_len()];
    ops::conv_forward(s, batch, &input, &params[unit.w.clone()], unit.b.clone().map(|r| &params[r]), &mut z);
    let mut bn_cache = None;
    let mut pre = match &unit.bn {
        None => z,
        Some(bn) => {
            let mut y = vec![0.0; z.len()];
            let (gamma, beta) = (&params[bn.gamma.clone()], &params[bn.beta.clone()]);
            match norm {
                Norm::Inference => {
                    ops::bn_forward_infer(
                        batch,
                        s.cout,
                        s.plane(),
                        &z,
                        gamma,
                        beta,
                        &running[bn.mean.clone()],
                        &running[bn.var.clone()],
                        &mut y,
                    );
                }
                Norm::Batch | Norm::BatchAndTrack => {
                    let c = ops::bn_forward_train(batch, s.cout, s.plane(), &z, gamma, beta, &mut y);
                    if let Some(buf) = track {
                        let m = cfg.bn_momentum;
                        let n = (batch * s.plane()) as f64;
                        let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                        for ch in 0..s.cout {
                            let rm = &mut buf[bn.mean.start + ch];
                            *rm = m * *rm + (1.0 - m) * c.mean[ch];
                            let rv = &mut buf[bn.var.start + ch];
                            *rv = m * *rv + (1.0 - m) * c.var[ch] * unbias;
                        }
                    }
                    bn_cache = Some(c);
                }
            }
            y
        }
    };
    if unit.residual {
        pre.iter_mut().zip(&input).for_each(|(p, x)| *p += x);
    }
    let mut out = pre.clone();
    ops::relu_inplace(&mut out);
    let cache = keep.then_some(UnitCache { input, bn: bn_cache, pre });
    (out, cache)
}

/// Returns logits, values and (for batch-statistics modes) the backward cache.
/// `track` receives updated running statistics in [`Norm::BatchAndTrack`] mode.
#[allow(clippy::too_many_arguments)]
fn run_forward(
    cfg: &NetConfig,
    layout: &Layout,
    params: &[f64],
    running: &[f64],
    mut track: Option<&mut [f64]>,
    inputs: &[f64],
    batch: usize,
    norm: Norm,
) -> (Vec<f64>, Vec<f64>, Option<Cache>) {
    if norm != Norm::BatchAndTrack {
        track = None;
    }
    let mut trunk_caches = Vec::new();
    let mut x = inputs.to_vec();
    for unit in &layout.trunk {
        let (out, c) = unit_forward(cfg, unit, params, running, track.as_deref_mut(), x, batch, norm);
        trunk_caches.extend(c);
        x = out;
    }
    let (policy_feat, pc) =
        unit_forward(cfg, &layout.policy_conv, params, running, track.as_deref_mut(), x.clone(), batch, norm);
    let (value_feat, vc) = unit_forward(cfg, &layout.value_conv, params, running, track, x, batch, norm);
    let pf = &layout.policy_fc;
    let mut logits = vec![0.0; batch * pf.nout];
    ops::dense_forward(batch, pf.nin, pf.nout, &policy_feat, &params[pf.w.clone()], &params[pf.b.clone()], &mut logits);
    let f1 = &layout.value_fc1;
    let mut hidden_pre = vec![0.0; batch * f1.nout];
    ops::dense_forward(batch, f1.nin, f1.nout, &value_feat, &params[f1.w.clone()], &params[f1.b.clone()], &mut hidden_pre);
    let mut hidden = hidden_pre.clone();
    ops::relu_inplace(&mut hidden);
    let f2 = &layout.value_fc2;
    let mut values = vec![0.0; batch];
    ops::dense_forward(batch, f2.nin, f2.nout, &hidden, &params[f2.w.clone()], &params[f2.b.clone()], &mut values);
    let cache = (norm != Norm::Inference).then(|| Cache {
        batch,
        trunk: trunk_caches,
        policy: pc.unwrap_or_default(),
        policy_feat,
        value: vc.unwrap_or_default(),
        value_feat,
        hidden_pre,
        hidden,
    });
    (logits, values, cache)
}

/// Overwrites and returns the input gradient; accumulates parameter gradients.
fn unit_backward(unit: &ConvUnit, params: &[f64], cache: &UnitCache, batch: usize, dout: &[f64], grads: &mut [f64]) -> Vec<f64> {
    let s = &unit.shape;
    let mut dpre = dout.to_vec();
    ops::relu_backward_inplace(&cache.pre, &mut dpre);
    let dz = match (&unit.bn, &cache.bn) {
        (Some(bn), Some(c)) => {
            let mut dz = vec![0.0; dpre.len()];
            let mut dgamma = vec![0.0; s.cout];
            let mut dbeta = vec![0.0; s.cout];
            ops::bn_backward(batch, s.cout, s.plane(), c, &params[bn.gamma.clone()], &dpre, &mut dz, &mut dgamma, &mut dbeta);
            add(&mut grads[bn.gamma.clone()], &dgamma);
            add(&mut grads[bn.beta.clone()], &dbeta);
            dz
        }
        _ => dpre.clone(),
    };
    let mut dx = vec![0.0; cache.input.len()];
    let mut dw = vec![0.0; unit.w.len()];
    let mut db = unit.b.as_ref().map(|r| vec![0.0; r.len()]);
    ops::conv_backward(s, batch, &cache.input, &params[unit.w.clone()], &dz, &mut dx, &mut dw, db.as_deref_mut());
    add(&mut grads[unit.w.clone()], &dw);
    if let (Some(r), Some(db)) = (&unit.b, db) {
        add(&mut grads[r.clone()], &db);
    }
    if unit.residual {
        add(&mut dx, &dpre);
    }
    dx
}

fn add(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn dense_backward(d: &DenseUnit, params: &[f64], batch: usize, x: &[f64], dy: &[f64], grads: &mut [f64]) -> Vec<f64> {
    let mut dx = vec![0.0; batch * d.nin];
    let mut dw = vec![0.0; d.w.len()];
    let mut db = vec![0.0; d.nout];
    ops::dense_backward(batch, d.nin, d.nout, x, &params[d.w.clone()], dy, &mut dx, &mut dw, &mut db);
    add(&mut grads[d.w.clone()], &dw);
    add(&mut grads[d.b.clone()], &db);
    dx
}

fn run_backward(layout: &Layout, params: &[f64], cache: &Cache, dlogits: &[f64], dvalues: &[f64], grads: &mut [f64]) {
    let batch = cache.batch;
    let mut dhidden = dense_backward(&layout.value_fc2, params, batch, &cache.hidden, dvalues, grads);
    ops::relu_backward_inplace(&cache.hidden_pre, &mut dhidden);
    let dvalue_feat = dense_backward(&layout.value_fc1, params, batch, &cache.value_feat, &dhidden, grads);
    let mut dtrunk = unit_backward(&layout.value_conv, params, &cache.value, batch, &dvalue_feat, grads);
    let dpolicy_feat = dense_backward(&layout.policy_fc, params, batch, &cache.policy_feat, dlogits, grads);
    let dp = unit_backward(&layout.policy_conv, params, &cache.policy, batch, &dpolicy_feat, grads);
    add(&mut dtrunk, &dp);
    for (unit, c) in layout.trunk.iter().zip(&cache.trunk).rev() {
        dtrunk = unit_backward(unit, params, c, batch, &dtrunk, grads);
    }
}
