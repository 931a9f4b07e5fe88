//! Dense symmetric autoencoder scored with per-dimension binary
//! cross-entropy. Hidden layers use LeakyReLU, the bottleneck output is
//! linear, the final decoder layer is a sigmoid so reconstructions live in
//! (0, 1) alongside the encoded inputs.

mod train;

pub use train::{batch_mean_loss, loss_gradients, train, TrainConfig, TrainOutcome};

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::EncodingMap;

/// Reconstructions are clamped to `[EPS, 1 - EPS]` before the log terms.
pub const CLAMP_EPS: f64 = 1e-7;

const MODEL_FORMAT_VERSION: u32 = 1;

/// Layer widths of a symmetric encoder/decoder stack plus the LeakyReLU
/// slope of its hidden layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub widths: Vec<usize>,
    pub leaky_alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Activation {
    LeakyRelu(f64),
    Identity,
    Sigmoid,
}

impl LayerSpec {
    pub fn new(widths: Vec<usize>, leaky_alpha: f64) -> Result<Self> {
        let s = Self { widths, leaky_alpha };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.widths.len();
        if n < 3 || n % 2 == 0 {
            return Err(Error::Model(format!(
                "need an odd number of at least 3 widths, got {n}"
            )));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Model("zero-width layer".into()));
        }
        for i in 0..n / 2 {
            if self.widths[i] != self.widths[n - 1 - i] {
                return Err(Error::Model(format!(
                    "asymmetric widths: position {i} is {} but its mirror is {}",
                    self.widths[i],
                    self.widths[n - 1 - i]
                )));
            }
        }
        if self.widths[n / 2] >= self.widths[0] {
            return Err(Error::Model(format!(
                "bottleneck {} must be narrower than the input {}",
                self.widths[n / 2],
                self.widths[0]
            )));
        }
        if !(self.leaky_alpha > 0.0 && self.leaky_alpha < 1.0) {
            return Err(Error::Model(format!(
                "leaky_alpha {} outside (0, 1)",
                self.leaky_alpha
            )));
        }
        Ok(())
    }

    pub fn input_dims(&self) -> usize {
        self.widths[0]
    }

    pub fn bottleneck(&self) -> usize {
        self.widths[self.widths.len() / 2]
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Index of the layer whose output is the latent code.
    fn encoder_final(&self) -> usize {
        self.widths.len() / 2 - 1
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer == self.encoder_final() {
            Activation::Identity
        } else if layer == self.n_layers() - 1 {
            Activation::Sigmoid
        } else {
            Activation::LeakyRelu(self.leaky_alpha)
        }
    }
}

/// Weights and bias of one dense layer; `weight` is `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// A trained (or freshly initialized) network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub spec: LayerSpec,
    pub layers: Vec<Layer>,
    /// Seed the parameters were initialized (and trained) with.
    pub seed: u64,
    /// Epoch the snapshot was taken at; 0 for an untrained network.
    pub epoch: usize,
}

impl NetworkParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: &LayerSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.n_layers());
        for l in 0..spec.n_layers() {
            let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut weight = Array2::zeros((fan_in, fan_out));
            for w in weight.iter_mut() {
                *w = rng.random_range(-limit..limit);
            }
            layers.push(Layer { weight, bias: Array1::zeros(fan_out) });
        }
        Ok(Self { spec: spec.clone(), layers, seed, epoch: 0 })
    }

    pub fn input_dims(&self) -> usize {
        self.spec.input_dims()
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.layers.len() != self.spec.n_layers() {
            return Err(Error::Model(format!(
                "{} layers for {} specified",
                self.layers.len(),
                self.spec.n_layers()
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let want = (self.spec.widths[l], self.spec.widths[l + 1]);
            if layer.weight.dim() != want || layer.bias.len() != want.1 {
                return Err(Error::Model(format!("layer {l} has the wrong shape")));
            }
            if layer.weight.iter().chain(layer.bias.iter()).any(|x| !x.is_finite()) {
                return Err(Error::Model(format!("layer {l} holds non-finite parameters")));
            }
        }
        Ok(())
    }

    /// Forward pass keeping every pre-activation and activation; the
    /// workhorse for training and payoff evaluation. Assumes the batch width
    /// was validated by the caller.
    pub(crate) fn forward_trace(&self, batch: ArrayView2<'_, f64>) -> ForwardTrace {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut a = batch.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.weight) + &layer.bias;
            a = match self.spec.activation(l) {
                Activation::LeakyRelu(alpha) => z.mapv(|x| if x >= 0.0 { x } else { alpha * x }),
                Activation::Identity => z.clone(),
                Activation::Sigmoid => z.mapv(|x| 1.0 / (1.0 + (-x).exp())),
            };
            pre.push(z);
            post.push(a.clone());
        }
        ForwardTrace { pre, post }
    }

    /// Reconstruction only; skips keeping intermediates.
    pub(crate) fn reconstruct_batch(&self, batch: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut a = batch.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.weight) + &layer.bias;
            a = match self.spec.activation(l) {
                Activation::LeakyRelu(alpha) => z.mapv(|x| if x >= 0.0 { x } else { alpha * x }),
                Activation::Identity => z,
                Activation::Sigmoid => z.mapv(|x| 1.0 / (1.0 + (-x).exp())),
            };
        }
        a
    }

    /// Returns `(latent codes, reconstructions)` for a batch.
    pub fn forward(&self, batch: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_batch(batch)?;
        let trace = self.forward_trace(batch);
        let latent = trace.post[self.spec.encoder_final()].clone();
        let recon = trace.post.last().unwrap().clone();
        Ok((latent, recon))
    }

    fn check_batch(&self, batch: ArrayView2<'_, f64>) -> Result<()> {
        if batch.ncols() != self.input_dims() {
            return Err(Error::Model(format!(
                "batch width {} does not match the {}-dim input layer",
                batch.ncols(),
                self.input_dims()
            )));
        }
        if batch.iter().any(|x| !x.is_finite()) {
            return Err(Error::Model("non-finite input".into()));
        }
        Ok(())
    }
}

pub(crate) struct ForwardTrace {
    pub pre: Vec<Array2<f64>>,
    pub post: Vec<Array2<f64>>,
}

/// One binary cross-entropy term with the reconstruction clamp.
#[inline]
pub(crate) fn bce_term(x: f64, xhat: f64) -> f64 {
    let c = xhat.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS);
    -(x * c.ln() + (1.0 - x) * (1.0 - c).ln())
}

/// Per-dimension binary cross-entropy between a target row in `[0, 1]` and
/// its reconstruction.
pub fn bce_loss(x: ArrayView1<'_, f64>, xhat: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if x.len() != xhat.len() {
        return Err(Error::Model(format!(
            "target has {} dims, reconstruction {}",
            x.len(),
            xhat.len()
        )));
    }
    for &v in x.iter() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Model(format!("target value {v} outside [0, 1]")));
        }
    }
    Ok(Array1::from_iter(x.iter().zip(xhat.iter()).map(|(&a, &b)| bce_term(a, b))))
}

/// Anomaly score of each row: the sum of its per-dimension losses.
pub fn score_rows(params: &NetworkParams, data: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    params.validate()?;
    let mut scores = Vec::with_capacity(data.nrows());
    for chunk in data.axis_chunks_iter(Axis(0), 8192) {
        params.check_batch(chunk)?;
        let recon = params.reconstruct_batch(chunk);
        for (x, c) in chunk.outer_iter().zip(recon.outer_iter()) {
            let loss = bce_loss(x, c.view())?;
            scores.push(loss.sum());
        }
    }
    Ok(scores)
}

/// Loss breakdown of a single row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub per_dim_loss: Vec<f64>,
    pub per_attribute_loss: Vec<f64>,
    /// Sum of `per_dim_loss` in dimension order.
    pub total_loss: f64,
    pub reconstruction: Vec<f64>,
}

/// Reconstructs one row and splits its loss by dimension and by attribute.
pub fn reconstruct_report(
    params: &NetworkParams,
    row: ArrayView1<'_, f64>,
    map: &EncodingMap,
) -> Result<ReconstructionReport> {
    if map.total_dims() != params.input_dims() {
        return Err(Error::Model(format!(
            "encoding has {} dims, network expects {}",
            map.total_dims(),
            params.input_dims()
        )));
    }
    let batch = row.insert_axis(Axis(0));
    params.check_batch(batch)?;
    let recon = params.reconstruct_batch(batch);
    let per_dim = bce_loss(row, recon.row(0))?;
    let per_attribute: Vec<f64> = map
        .slices()
        .iter()
        .map(|s| s.range().map(|d| per_dim[d]).sum())
        .collect();
    Ok(ReconstructionReport {
        total_loss: per_dim.sum(),
        per_dim_loss: per_dim.to_vec(),
        per_attribute_loss: per_attribute,
        reconstruction: recon.row(0).to_vec(),
    })
}

/// Rows whose score exceeds a quantile threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagReport {
    pub threshold: f64,
    /// Score of every row, in row order.
    pub scores: Vec<f64>,
    /// `(row index, score)` with score strictly above the threshold, sorted
    /// by score descending, then by row index.
    pub flagged: Vec<(usize, f64)>,
}

/// Linear-interpolation quantile of the scores (R type 7), then strict
/// exceedance: with every score equal, nothing is flagged.
pub fn flag_from_scores(scores: &[f64], delta_quantile: f64) -> Result<FlagReport> {
    if scores.is_empty() {
        return Err(Error::Eval("no scores to flag".into()));
    }
    if !(delta_quantile > 0.0 && delta_quantile < 1.0) {
        return Err(Error::Eval(format!("delta_quantile {delta_quantile} outside (0, 1)")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Eval("non-finite score".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let h = (sorted.len() - 1) as f64 * delta_quantile;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let threshold = sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]);

    let mut flagged: Vec<(usize, f64)> = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > threshold)
        .map(|(i, &s)| (i, s))
        .collect();
    flagged.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(FlagReport { threshold, scores: scores.to_vec(), flagged })
}

/// Scores every row and flags the strict exceedances of the
/// `delta_quantile` score quantile.
pub fn flag_anomalies(
    params: &NetworkParams,
    data: ArrayView2<'_, f64>,
    delta_quantile: f64,
) -> Result<FlagReport> {
    let scores = score_rows(params, data)?;
    flag_from_scores(&scores, delta_quantile)
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    /// Row-major `in x out` weights.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    widths: Vec<usize>,
    leaky_alpha: f64,
    seed: u64,
    epoch: usize,
    layers: Vec<LayerFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
}

/// Serializes a network (plus optional metadata) to JSON. JSON floats use
/// the shortest round-trip form, so save/load/save is byte-stable.
pub fn model_to_json(params: &NetworkParams, meta: Option<serde_json::Value>) -> Result<String> {
    params.validate()?;
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        widths: params.spec.widths.clone(),
        leaky_alpha: params.spec.leaky_alpha,
        seed: params.seed,
        epoch: params.epoch,
        layers: params
            .layers
            .iter()
            .map(|l| LayerFile {
                weights: l.weight.iter().copied().collect(),
                bias: l.bias.to_vec(),
            })
            .collect(),
        meta,
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

/// Parses a network serialized by [`model_to_json`].
pub fn model_from_json(text: &str) -> Result<(NetworkParams, Option<serde_json::Value>)> {
    let file: ModelFile = serde_json::from_str(text)?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Model(format!(
            "unsupported model format_version {} (expected {MODEL_FORMAT_VERSION})",
            file.format_version
        )));
    }
    let spec = LayerSpec::new(file.widths, file.leaky_alpha)?;
    if file.layers.len() != spec.n_layers() {
        return Err(Error::Model(format!(
            "{} layers for {} specified",
            file.layers.len(),
            spec.n_layers()
        )));
    }
    let mut layers = Vec::with_capacity(file.layers.len());
    for (l, lf) in file.layers.into_iter().enumerate() {
        let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
        if lf.weights.len() != fan_in * fan_out || lf.bias.len() != fan_out {
            return Err(Error::Model(format!("layer {l} has the wrong shape")));
        }
        let weight = Array2::from_shape_vec((fan_in, fan_out), lf.weights)
            .map_err(|e| Error::Model(e.to_string()))?;
        layers.push(Layer { weight, bias: Array1::from_vec(lf.bias) });
    }
    let params = NetworkParams { spec, layers, seed: file.seed, epoch: file.epoch };
    params.validate()?;
    Ok((params, file.meta))
}

pub fn save_model(params: &NetworkParams, path: &Path, meta: Option<serde_json::Value>) -> Result<()> {
    std::fs::write(path, model_to_json(params, meta)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(NetworkParams, Option<serde_json::Value>)> {
    let text = std::fs::read_to_string(path)?;
    model_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn small_spec() -> LayerSpec {
        LayerSpec::new(vec![6, 4, 3, 4, 6], 0.4).unwrap()
    }

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>())
    }

    #[test]
    fn layer_spec_validation() {
        assert!(LayerSpec::new(vec![6, 4, 6], 0.4).is_ok());
        assert!(LayerSpec::new(vec![6, 4], 0.4).is_err(), "even count");
        assert!(LayerSpec::new(vec![6, 4, 3, 5, 6], 0.4).is_err(), "asymmetric");
        assert!(LayerSpec::new(vec![6, 4, 0, 4, 6], 0.4).is_err(), "zero width");
        assert!(LayerSpec::new(vec![6, 4, 6, 4, 6], 0.4).is_err(), "wide bottleneck");
        assert!(LayerSpec::new(vec![6, 4, 3, 4, 6], 0.0).is_err(), "alpha");
        assert!(LayerSpec::new(vec![6, 4, 3, 4, 6], 1.0).is_err(), "alpha");
    }

    #[test]
    fn activation_placement() {
        let spec = LayerSpec::new(vec![20, 18, 16, 15, 16, 18, 20], 0.4).unwrap();
        assert_eq!(spec.activation(0), Activation::LeakyRelu(0.4));
        assert_eq!(spec.activation(1), Activation::LeakyRelu(0.4));
        assert_eq!(spec.activation(2), Activation::Identity);
        assert_eq!(spec.activation(3), Activation::LeakyRelu(0.4));
        assert_eq!(spec.activation(4), Activation::LeakyRelu(0.4));
        assert_eq!(spec.activation(5), Activation::Sigmoid);
        assert_eq!(spec.bottleneck(), 15);
    }

    #[test]
    fn glorot_init_is_bounded_and_seeded() {
        let spec = small_spec();
        let a = NetworkParams::init(&spec, 3).unwrap();
        let b = NetworkParams::init(&spec, 3).unwrap();
        let c = NetworkParams::init(&spec, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for (l, layer) in a.layers.iter().enumerate() {
            let limit = (6.0 / (spec.widths[l] + spec.widths[l + 1]) as f64).sqrt();
            assert!(layer.weight.iter().all(|w| w.abs() < limit));
            assert!(layer.bias.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn forward_shapes_and_range() {
        let spec = small_spec();
        let params = NetworkParams::init(&spec, 0).unwrap();
        let batch = random_batch(7, 6, 1);
        let (latent, recon) = params.forward(batch.view()).unwrap();
        assert_eq!(latent.dim(), (7, 3));
        assert_eq!(recon.dim(), (7, 6));
        assert!(recon.iter().all(|&x| x > 0.0 && x < 1.0), "sigmoid output");
    }

    #[test]
    fn forward_rejects_bad_input() {
        let params = NetworkParams::init(&small_spec(), 0).unwrap();
        assert!(params.forward(random_batch(2, 5, 0).view()).is_err());
        let mut bad = random_batch(2, 6, 0);
        bad[[1, 3]] = f64::NAN;
        assert!(params.forward(bad.view()).is_err());
    }

    #[test]
    fn bce_known_values() {
        let x = array![1.0, 0.0, 0.5];
        let xhat = array![0.5, 0.5, 0.5];
        let loss = bce_loss(x.view(), xhat.view()).unwrap();
        let ln2 = std::f64::consts::LN_2;
        for &l in loss.iter() {
            assert!((l - ln2).abs() < 1e-15, "{l}");
        }
    }

    #[test]
    fn bce_clamps_extreme_reconstructions() {
        let x = array![1.0, 0.0];
        let xhat = array![0.0, 1.0];
        let loss = bce_loss(x.view(), xhat.view()).unwrap();
        let expect = -(CLAMP_EPS.ln());
        for &l in loss.iter() {
            assert!(l.is_finite());
            assert!((l - expect).abs() < 1e-9, "{l} vs {expect}");
        }
    }

    #[test]
    fn bce_rejects_out_of_range_targets() {
        assert!(bce_loss(array![1.5].view(), array![0.5].view()).is_err());
        assert!(bce_loss(array![0.5, 0.5].view(), array![0.5].view()).is_err());
    }

    #[test]
    fn report_partitions_total_loss() {
        use crate::tabular::{encode, RecordTable};
        let names: Vec<String> = vec!["c".into(), "x".into()];
        let raw: Vec<Vec<String>> = [["p", "1"], ["q", "2"], ["r", "3"]]
            .iter()
            .map(|r| r.iter().map(|s| s.to_string()).collect())
            .collect();
        let t = RecordTable::from_raw(
            &names,
            &raw,
            &[crate::tabular::AttrKind::Categorical, crate::tabular::AttrKind::Numerical],
        )
        .unwrap();
        let (m, map) = encode(&t, true).unwrap();
        let spec = LayerSpec::new(vec![map.total_dims(), 4, 2, 4, map.total_dims()], 0.4).unwrap();
        let params = NetworkParams::init(&spec, 5).unwrap();
        for i in 0..m.nrows() {
            let rep = reconstruct_report(&params, m.row(i), &map).unwrap();
            assert_eq!(rep.per_dim_loss.len(), map.total_dims());
            assert_eq!(rep.per_attribute_loss.len(), 2);
            let attr_sum: f64 = rep.per_attribute_loss.iter().sum();
            assert!((attr_sum - rep.total_loss).abs() < 1e-12);
            let dim_sum: f64 = rep.per_dim_loss.iter().sum();
            assert!((dim_sum - rep.total_loss).abs() < 1e-12);
        }
    }

    #[test]
    fn score_rows_matches_reports() {
        use crate::tabular::{encode, RecordTable};
        let names: Vec<String> = vec!["x".into(), "y".into()];
        let raw: Vec<Vec<String>> = [["0.1", "5"], ["0.9", "9"], ["0.4", "7"]]
            .iter()
            .map(|r| r.iter().map(|s| s.to_string()).collect())
            .collect();
        let t = RecordTable::from_raw(
            &names,
            &raw,
            &[crate::tabular::AttrKind::Numerical, crate::tabular::AttrKind::Numerical],
        )
        .unwrap();
        let (m, map) = encode(&t, false).unwrap();
        let spec = LayerSpec::new(vec![2, 1, 2], 0.4).unwrap();
        let params = NetworkParams::init(&spec, 9).unwrap();
        let scores = score_rows(&params, m.view()).unwrap();
        for i in 0..m.nrows() {
            let rep = reconstruct_report(&params, m.row(i), &map).unwrap();
            assert_eq!(scores[i], rep.total_loss);
        }
    }

    #[test]
    fn quantile_flagging_matches_hand_computation() {
        let scores: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let rep = flag_from_scores(&scores, 0.5).unwrap();
        // h = 9 * 0.5 = 4.5 between 5 and 6
        assert_eq!(rep.threshold, 5.5);
        assert_eq!(rep.flagged.iter().map(|f| f.0).collect::<Vec<_>>(), vec![9, 8, 7, 6, 5]);

        let rep = flag_from_scores(&scores, 0.9).unwrap();
        // h = 8.1, threshold = 9 + 0.1 * (10 - 9)
        assert!((rep.threshold - 9.1).abs() < 1e-12);
        assert_eq!(rep.flagged.len(), 1);
        assert_eq!(rep.flagged[0].0, 9);
    }

    #[test]
    fn tight_quantile_flags_at_most_the_tail() {
        let scores: Vec<f64> = (0..10_000).map(|i| i as f64 * 0.001).collect();
        let rep = flag_from_scores(&scores, 0.999).unwrap();
        assert!(rep.flagged.len() <= 10, "{}", rep.flagged.len());
        assert!(!rep.flagged.is_empty());
    }

    #[test]
    fn equal_scores_flag_nothing() {
        let rep = flag_from_scores(&vec![2.5; 100], 0.9).unwrap();
        assert_eq!(rep.threshold, 2.5);
        assert!(rep.flagged.is_empty());
    }

    #[test]
    fn flag_input_validation() {
        assert!(flag_from_scores(&[], 0.5).is_err());
        assert!(flag_from_scores(&[1.0], 0.0).is_err());
        assert!(flag_from_scores(&[1.0], 1.0).is_err());
        assert!(flag_from_scores(&[f64::NAN], 0.5).is_err());
    }

    #[test]
    fn single_score_threshold_is_that_score() {
        let rep = flag_from_scores(&[3.25], 0.7).unwrap();
        assert_eq!(rep.threshold, 3.25);
        assert!(rep.flagged.is_empty());
    }

    #[test]
    fn model_json_round_trip_is_byte_stable() {
        let params = NetworkParams::init(&small_spec(), 11).unwrap();
        let meta = Some(serde_json::json!({"config": "deadbeef", "master_seed": 7}));
        let first = model_to_json(&params, meta.clone()).unwrap();
        let (loaded, loaded_meta) = model_from_json(&first).unwrap();
        assert_eq!(loaded, params);
        assert_eq!(loaded_meta, meta);
        let second = model_to_json(&loaded, loaded_meta).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn model_file_rejects_corruption() {
        let params = NetworkParams::init(&small_spec(), 11).unwrap();
        let text = model_to_json(&params, None).unwrap();
        let bumped = text.replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(model_from_json(&bumped).is_err());

        let mut file: serde_json::Value = serde_json::from_str(&text).unwrap();
        file["layers"][0]["bias"] = serde_json::json!([0.0]);
        assert!(model_from_json(&file.to_string()).is_err());
    }

    #[test]
    fn save_load_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let params = NetworkParams::init(&small_spec(), 2).unwrap();
        save_model(&params, &path, None).unwrap();
        let (loaded, meta) = load_model(&path).unwrap();
        assert_eq!(loaded, params);
        assert!(meta.is_none());

        let batch = random_batch(3, 6, 8);
        let (_, a) = params.forward(batch.view()).unwrap();
        let (_, b) = loaded.forward(batch.view()).unwrap();
        assert_eq!(a, b, "reconstructions must be bit-identical");
    }
}
