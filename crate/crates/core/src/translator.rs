//! Mapping from a user's source representation to the target one.
//!
//! Every strategy is a stack of dense layers under the `translator.` prefix:
//!
//! | strategy      | layers                                                          |
//! |---------------|-----------------------------------------------------------------|
//! | `identity`    | none                                                            |
//! | `linear`      | `translator.h` (D_T x D_S, no bias)                             |
//! | `orthogonal`  | as `linear`, plus `lambda * ||H^T H - I||_F^2` in the loss      |
//! | `mlp`         | two tanh layers 2D_S wide, then a linear output layer           |
//! | `translator`  | tanh encoder down to h, decoder back to D_S, then `translator.h` |

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::ops::{self, affine, affine_backward};
use crate::numeric::{xavier, Gradients, ParameterSet, Tensor};

pub const PROJECTION: &str = "translator.h";
pub const PREFIX: &str = "translator.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransferStrategy {
    Identity,
    Linear,
    OrthogonalLinear,
    NonlinearMlp,
    Autoencoder,
}

impl TransferStrategy {
    pub const ALL: [TransferStrategy; 5] = [
        TransferStrategy::Identity,
        TransferStrategy::Linear,
        TransferStrategy::OrthogonalLinear,
        TransferStrategy::NonlinearMlp,
        TransferStrategy::Autoencoder,
    ];

    pub fn key(self) -> &'static str {
        match self {
            TransferStrategy::Identity => "identity",
            TransferStrategy::Linear => "linear",
            TransferStrategy::OrthogonalLinear => "orthogonal",
            TransferStrategy::NonlinearMlp => "mlp",
            TransferStrategy::Autoencoder => "translator",
        }
    }
}

impl fmt::Display for TransferStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for TransferStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        TransferStrategy::ALL
            .into_iter()
            .find(|t| t.key() == s)
            .ok_or_else(|| format!("unknown strategy `{s}` (identity|linear|orthogonal|mlp|translator)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslatorSpec {
    pub strategy: TransferStrategy,
    pub source_dim: usize,
    pub target_dim: usize,
    /// Encoder depth of the autoencoder translator.
    pub hidden_layers: usize,
    /// Width of the hidden code `z_u`.
    pub hidden_width: usize,
    pub ortho_lambda: f64,
}

impl TranslatorSpec {
    /// Small-waist defaults: one hidden layer of width `dim / 2`.
    pub fn new(strategy: TransferStrategy, dim: usize) -> Self {
        TranslatorSpec {
            strategy,
            source_dim: dim,
            target_dim: dim,
            hidden_layers: 1,
            hidden_width: (dim / 2).max(1),
            ortho_lambda: 0.1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.strategy == TransferStrategy::Identity && self.source_dim != self.target_dim {
            return Err(Error::ShapeMismatch {
                op: "identity translator",
                left: vec![self.source_dim],
                right: vec![self.target_dim],
            });
        }
        if self.hidden_layers == 0 || self.hidden_width == 0 {
            return Err(Error::config("transfer.hidden_layers", "must be positive"));
        }
        Ok(())
    }

    fn layers(&self) -> Vec<LayerSpec> {
        let (ds, dt) = (self.source_dim, self.target_dim);
        let dense = |name: String, input, output, bias, tanh| LayerSpec {
            name,
            input,
            output,
            bias,
            tanh,
        };
        match self.strategy {
            TransferStrategy::Identity => vec![],
            TransferStrategy::Linear | TransferStrategy::OrthogonalLinear => {
                vec![dense(PROJECTION.into(), ds, dt, false, false)]
            }
            TransferStrategy::NonlinearMlp => vec![
                dense("translator.mlp.0".into(), ds, 2 * ds, true, true),
                dense("translator.mlp.1".into(), 2 * ds, 2 * ds, true, true),
                dense("translator.mlp.2".into(), 2 * ds, dt, true, false),
            ],
            TransferStrategy::Autoencoder => {
                let n = self.hidden_layers;
                let h = self.hidden_width;
                // Widths shrink linearly from D_S to h over the encoder.
                let widths: Vec<usize> = (0..=n)
                    .map(|i| if i == n { h } else { (ds - ds.saturating_sub(h) * i / n).max(1) })
                    .collect();
                let mut out = Vec::new();
                for i in 0..n {
                    out.push(dense(format!("translator.encoder.{i}"), widths[i], widths[i + 1], true, true));
                }
                for i in 0..n {
                    let (a, b) = (widths[n - i], widths[n - i - 1]);
                    out.push(dense(format!("translator.decoder.{i}"), a, b, true, i + 1 < n));
                }
                out.push(dense(PROJECTION.into(), ds, dt, false, false));
                out
            }
        }
    }

    /// Number of scalars the strategy trains.
    pub fn parameter_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.input * l.output + if l.bias { l.output } else { 0 })
            .sum()
    }
}

#[derive(Debug, Clone)]
struct LayerSpec {
    name: String,
    input: usize,
    output: usize,
    bias: bool,
    tanh: bool,
}

impl LayerSpec {
    fn w(&self) -> String {
        if self.bias {
            format!("{}.w", self.name)
        } else {
            self.name.clone()
        }
    }

    fn b(&self) -> String {
        format!("{}.b", self.name)
    }
}

/// Xavier weights, zero biases; `H` starts at the identity when the
/// dimensions agree.
pub fn init_translator<R: Rng + ?Sized>(params: &mut ParameterSet, spec: &TranslatorSpec, rng: &mut R) -> Result<()> {
    spec.validate()?;
    for l in spec.layers() {
        let w = if l.name == PROJECTION && l.input == l.output {
            Tensor::identity(l.input)
        } else {
            xavier(l.output, l.input, rng)
        };
        params.insert(l.w(), w)?;
        if l.bias {
            params.insert(l.b(), Tensor::zeros(&[l.output]))?;
        }
    }
    Ok(())
}

/// Forward values of one pair, kept for backward.
struct Trace {
    inputs: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

/// Read-only view of the translator parameters.
pub struct Translator<'a> {
    spec: &'a TranslatorSpec,
    layers: Vec<(LayerSpec, &'a Tensor, Option<&'a Tensor>)>,
    projection: Option<&'a Tensor>,
}

impl<'a> Translator<'a> {
    pub fn new(params: &'a ParameterSet, spec: &'a TranslatorSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layers()
            .into_iter()
            .map(|l| {
                let w = params.require(&l.w())?;
                if w.dims() != [l.output, l.input] {
                    return Err(Error::ShapeMismatch {
                        op: "translator layer",
                        left: w.dims().to_vec(),
                        right: vec![l.output, l.input],
                    });
                }
                let b = if l.bias { Some(params.require(&l.b())?) } else { None };
                Ok((l, w, b))
            })
            .collect::<Result<Vec<_>>>()?;
        let projection = params.get(PROJECTION);
        Ok(Translator {
            spec,
            layers,
            projection,
        })
    }

    pub fn spec(&self) -> &TranslatorSpec {
        self.spec
    }

    fn forward(&self, x: &[f64]) -> Result<Trace> {
        if x.len() != self.spec.source_dim {
            return Err(Error::ShapeMismatch {
                op: "translate",
                left: vec![self.spec.source_dim],
                right: vec![x.len()],
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for (l, w, b) in &self.layers {
            let mut y = affine(w, *b, &cur)?;
            if l.tanh {
                y = ops::tanh(&y);
            }
            inputs.push(std::mem::replace(&mut cur, y.clone()));
            outputs.push(y);
        }
        Ok(Trace { inputs, outputs })
    }

    /// `F(source_repr)`, a target-dimensional vector.
    pub fn translate(&self, source_repr: &[f64]) -> Result<Vec<f64>> {
        let tr = self.forward(source_repr)?;
        Ok(tr.outputs.last().cloned().unwrap_or_else(|| source_repr.to_vec()))
    }

    /// Hidden code `z_u` of the autoencoder translator.
    pub fn hidden_code(&self, source_repr: &[f64]) -> Result<Option<Vec<f64>>> {
        if self.spec.strategy != TransferStrategy::Autoencoder {
            return Ok(None);
        }
        let tr = self.forward(source_repr)?;
        Ok(Some(tr.outputs[self.spec.hidden_layers - 1].clone()))
    }

    fn ortho_penalty(&self) -> f64 {
        match (self.spec.strategy, self.projection) {
            (TransferStrategy::OrthogonalLinear, Some(h)) => {
                let g = gram_minus_identity(h);
                self.spec.ortho_lambda * g.values().iter().map(|v| v * v).sum::<f64>()
            }
            _ => 0.0,
        }
    }

    /// Mean squared distance between translated sources and targets, plus
    /// the orthogonality penalty for `orthogonal`.
    pub fn loss(&self, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
        Ok(self.loss_grad(pairs, 1.0, None)?.0)
    }

    /// `scale * loss`. When `grads` is given, accumulates the parameter
    /// gradient into it and also returns `(d/d source, d/d target)` per pair.
    #[allow(clippy::type_complexity)]
    pub fn loss_grad(
        &self,
        pairs: &[(Vec<f64>, Vec<f64>)],
        scale: f64,
        mut grads: Option<&mut Gradients>,
    ) -> Result<(f64, Vec<(Vec<f64>, Vec<f64>)>)> {
        if pairs.is_empty() {
            return Err(Error::Empty("translator loss over zero pairs".into()));
        }
        let n = pairs.len() as f64;
        let mut loss = 0.0;
        let mut input_grads = Vec::with_capacity(pairs.len());
        for (src, tgt) in pairs {
            if tgt.len() != self.spec.target_dim {
                return Err(Error::ShapeMismatch {
                    op: "translator loss",
                    left: vec![self.spec.target_dim],
                    right: vec![tgt.len()],
                });
            }
            let tr = self.forward(src)?;
            let out = tr.outputs.last().map_or(src.as_slice(), Vec::as_slice);
            let diff: Vec<f64> = out.iter().zip(tgt).map(|(o, t)| o - t).collect();
            loss += diff.iter().map(|d| d * d).sum::<f64>() / n;

            let Some(g) = grads.as_deref_mut() else {
                continue;
            };
            let mut dy: Vec<f64> = diff.iter().map(|d| scale * 2.0 * d / n).collect();
            let dtarget: Vec<f64> = dy.iter().map(|v| -v).collect();
            for (i, (l, w, _)) in self.layers.iter().enumerate().rev() {
                if l.tanh {
                    dy = ops::tanh_backward(&tr.outputs[i], &dy);
                }
                let mut gw = Tensor::zeros(w.dims());
                let mut gb = Tensor::zeros(&[l.output]);
                dy = affine_backward(w, &tr.inputs[i], &dy, &mut gw, Some(&mut gb));
                g.slot(&l.w(), w.dims()).add_scaled(&gw, 1.0)?;
                if l.bias {
                    g.slot(&l.b(), &[l.output]).add_scaled(&gb, 1.0)?;
                }
            }
            input_grads.push((dy, dtarget));
        }
        let penalty = self.ortho_penalty();
        loss += penalty;
        if penalty > 0.0 {
            if let (Some(g), Some(h)) = (grads, self.projection) {
                // d/dH ||H^T H - I||^2 = 4 H (H^T H - I)
                let gm = gram_minus_identity(h);
                let (rows, cols) = (h.rows(), h.cols());
                let slot = g.slot(PROJECTION, h.dims());
                for r in 0..rows {
                    for c in 0..cols {
                        let v: f64 = (0..cols).map(|k| h.row(r)[k] * gm.row(k)[c]).sum();
                        slot.row_mut(r)[c] += scale * self.spec.ortho_lambda * 4.0 * v;
                    }
                }
            }
        }
        Ok((scale * loss, input_grads))
    }
}

/// `H^T H - I`.
fn gram_minus_identity(h: &Tensor) -> Tensor {
    let cols = h.cols();
    let mut g = Tensor::zeros(&[cols, cols]);
    for r in 0..h.rows() {
        let row = h.row(r);
        for a in 0..cols {
            for b in 0..cols {
                g.row_mut(a)[b] += row[a] * row[b];
            }
        }
    }
    for a in 0..cols {
        g.row_mut(a)[a] -= 1.0;
    }
    g
}

/// Parameters under the translator prefix.
pub fn is_translator_param(name: &str) -> bool {
    name.starts_with(PREFIX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{adam_step, AdamConfig, AdamState};
    use crate::rng::stream;
    use rand::Rng;

    fn build(strategy: TransferStrategy, dim: usize, seed: u64) -> (ParameterSet, TranslatorSpec) {
        let spec = TranslatorSpec::new(strategy, dim);
        let mut p = ParameterSet::new();
        init_translator(&mut p, &spec, &mut stream(seed, "init")).unwrap();
        (p, spec)
    }

    fn random_pairs(n: usize, dim: usize, seed: u64, map: impl Fn(&[f64]) -> Vec<f64>) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut r = stream(seed, "pairs");
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
                let y = map(&x);
                (x, y)
            })
            .collect()
    }

    fn fit(p: &mut ParameterSet, spec: &TranslatorSpec, pairs: &[(Vec<f64>, Vec<f64>)], steps: usize, lr: f64) -> f64 {
        let cfg = AdamConfig { lr, ..AdamConfig::default() };
        let mut state = AdamState::new();
        for _ in 0..steps {
            let mut g = Gradients::new();
            Translator::new(p, spec).unwrap().loss_grad(pairs, 1.0, Some(&mut g)).unwrap();
            adam_step(p, &g, &mut state, &cfg).unwrap();
        }
        Translator::new(p, spec).unwrap().loss(pairs).unwrap()
    }

    #[test]
    fn strategy_keys_round_trip() {
        for s in TransferStrategy::ALL {
            assert_eq!(s.key().parse::<TransferStrategy>().unwrap(), s);
        }
        assert!("bogus".parse::<TransferStrategy>().is_err());
    }

    #[test]
    fn identity_passes_through_and_trains_nothing() {
        let (p, spec) = build(TransferStrategy::Identity, 4, 1);
        assert!(p.is_empty());
        assert_eq!(spec.parameter_count(), 0);
        let t = Translator::new(&p, &spec).unwrap();
        assert_eq!(t.translate(&[1.0, -2.0, 0.5, 0.0]).unwrap(), vec![1.0, -2.0, 0.5, 0.0]);
        let pairs = vec![(vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0])];
        assert!((t.loss(&pairs).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn parameter_counts_match_the_layers() {
        let d = 8;
        let (p, spec) = build(TransferStrategy::Autoencoder, d, 2);
        assert_eq!(spec.parameter_count(), p.scalar_count());
        // encoder 8->4, decoder 4->8, projection 8x8
        assert_eq!(spec.parameter_count(), (8 * 4 + 4) + (4 * 8 + 8) + 64);
        let (p, spec) = build(TransferStrategy::NonlinearMlp, d, 2);
        assert_eq!(spec.parameter_count(), p.scalar_count());
        assert_eq!(build(TransferStrategy::Linear, d, 2).1.parameter_count(), 64);
    }

    #[test]
    fn linear_recovers_a_linear_map() {
        let d = 4;
        let mut r = stream(3, "map");
        let m: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let pairs = random_pairs(64, d, 3, |x| m.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect());
        let (mut p, spec) = build(TransferStrategy::Linear, d, 3);
        let loss = fit(&mut p, &spec, &pairs, 3000, 0.01);
        assert!(loss < 1e-4, "loss {loss}");
        let h = p.require(PROJECTION).unwrap();
        for (i, row) in m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((h.row(i)[j] - v).abs() < 1e-2);
            }
        }
    }

    #[test]
    fn autoencoder_beats_identity_on_a_nonlinear_map() {
        let d = 4;
        let map = |x: &[f64]| -> Vec<f64> { x.iter().rev().map(|v| (2.0 * v).tanh()).collect() };
        let pairs = random_pairs(128, d, 4, map);
        let (ip, ispec) = build(TransferStrategy::Identity, d, 4);
        let identity = Translator::new(&ip, &ispec).unwrap().loss(&pairs).unwrap();
        let mut spec = TranslatorSpec::new(TransferStrategy::Autoencoder, d);
        spec.hidden_width = d;
        let mut p = ParameterSet::new();
        init_translator(&mut p, &spec, &mut stream(4, "init")).unwrap();
        let loss = fit(&mut p, &spec, &pairs, 2000, 0.01);
        assert!(loss < 0.25 * identity, "translator {loss} vs identity {identity}");
    }

    #[test]
    fn a_gradient_step_moves_outputs_toward_targets() {
        let d = 6;
        let pairs = random_pairs(16, d, 5, |x| x.iter().map(|v| v.sin()).collect());
        for s in [TransferStrategy::Linear, TransferStrategy::NonlinearMlp, TransferStrategy::Autoencoder] {
            let (mut p, spec) = build(s, d, 5);
            let before = Translator::new(&p, &spec).unwrap().loss(&pairs).unwrap();
            let mut g = Gradients::new();
            Translator::new(&p, &spec).unwrap().loss_grad(&pairs, 1.0, Some(&mut g)).unwrap();
            for (n, t) in g.iter() {
                p.get_mut(n).unwrap().add_scaled(t, -1e-3).unwrap();
            }
            let after = Translator::new(&p, &spec).unwrap().loss(&pairs).unwrap();
            assert!(after < before, "{s}: {after} >= {before}");
        }
    }

    #[test]
    fn input_gradients_point_away_from_the_target() {
        let (p, spec) = build(TransferStrategy::Identity, 2, 6);
        let pairs = vec![(vec![1.0, 0.0], vec![0.0, 0.0])];
        let (_, ig) = Translator::new(&p, &spec).unwrap().loss_grad(&pairs, 1.0, Some(&mut Gradients::new())).unwrap();
        assert_eq!(ig[0].0, vec![2.0, 0.0]);
        assert_eq!(ig[0].1, vec![-2.0, 0.0]);
    }

    #[test]
    fn orthogonal_penalty_vanishes_at_identity() {
        let d = 3;
        let (mut p, spec) = build(TransferStrategy::OrthogonalLinear, d, 7);
        let zero = vec![(vec![0.0; d], vec![0.0; d])];
        assert_eq!(Translator::new(&p, &spec).unwrap().loss(&zero).unwrap(), 0.0);
        // H = 2I: H^T H - I = 3I, squared norm 9d.
        p.get_mut(PROJECTION).unwrap().values_mut().iter_mut().for_each(|v| *v *= 2.0);
        let loss = Translator::new(&p, &spec).unwrap().loss(&zero).unwrap();
        assert!((loss - spec.ortho_lambda * 9.0 * d as f64).abs() < 1e-12);
        let mut g = Gradients::new();
        Translator::new(&p, &spec).unwrap().loss_grad(&zero, 1.0, Some(&mut g)).unwrap();
        // 4 lambda H (H^T H - I) = 24 lambda I
        let gh = g.require(PROJECTION).unwrap();
        assert!((gh.row(0)[0] - 24.0 * spec.ortho_lambda).abs() < 1e-12);
        assert_eq!(gh.row(0)[1], 0.0);
    }

    #[test]
    fn mismatched_shapes_are_errors() {
        let (p, spec) = build(TransferStrategy::Linear, 3, 8);
        let t = Translator::new(&p, &spec).unwrap();
        assert!(t.loss(&[(vec![0.0; 3], vec![0.0; 2])]).is_err());
        assert!(t.loss(&[]).is_err());
        let other = TranslatorSpec::new(TransferStrategy::Linear, 4);
        assert!(Translator::new(&p, &other).is_err());
    }
}
