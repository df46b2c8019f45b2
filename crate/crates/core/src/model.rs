//! Softmax classifiers: the linear discriminator `σ(vᵀx + b)` and a one-hidden-layer variant
//! `σ(vᵀ relu(Wx + c) + b)`, with exact backpropagation.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewD, ArrayViewMutD, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::simplex::{softmax_in_place, ProbVector};
use crate::{Error, Result};

const CHECKPOINT_MAGIC: &str = "entclust-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// Pass-through; only useful for tests that compare against the linear model.
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::invalid(format!("unknown activation '{other}'"))),
        }
    }
}

/// Representation layer `f_w(x) = act(W x + c)`.
/// Initial weight distribution of a linear model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Weights `U(±sqrt(6 / (N + K)))`, zero bias.
    #[default]
    Glorot,
    /// Weights and bias `U(±1 / sqrt(N))`.
    FanIn,
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glorot" => Ok(InitScheme::Glorot),
            "fan_in" => Ok(InitScheme::FanIn),
            other => Err(Error::invalid(format!("unknown init scheme '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HiddenLayer {
    /// `D × N_in`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxModel {
    /// Classifier weights `v`, `K × D` where `D` is the feature (or hidden) dimension.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub hidden: Option<HiddenLayer>,
    /// Seed that produced the initial parameters.
    pub seed: u64,
}

/// Result of evaluating the model on a single input.
#[derive(Clone, Debug)]
pub struct Forward {
    pub logits: Vec<f64>,
    pub prediction: ProbVector,
    /// `(pre_activation, activation)` of the hidden layer, when there is one.
    pub hidden: Option<(Vec<f64>, Vec<f64>)>,
}

/// Batched forward pass; rows are examples.
#[derive(Clone, Debug)]
pub struct BatchForward {
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
    pub hidden: Option<(Array2<f64>, Array2<f64>)>,
}

/// Accumulated `∂loss/∂parameter`, shape-matched to a model.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBuffer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub hidden_weights: Option<Array2<f64>>,
    pub hidden_bias: Option<Array1<f64>>,
}

fn all_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> bool {
    values.into_iter().all(|v| v.is_finite())
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, limit: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..=limit))
}

impl SoftmaxModel {
    /// Linear model with weights drawn uniformly from `[−a, a]`, `a = sqrt(6 / (N + K))`,
    /// and zero bias.
    pub fn linear(num_classes: usize, input_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let limit = (6.0 / (input_dim + num_classes) as f64).sqrt();
        SoftmaxModel {
            weights: uniform_matrix(&mut rng, num_classes, input_dim, limit),
            bias: Array1::zeros(num_classes),
            hidden: None,
            seed,
        }
    }

    /// Linear model initialised by `scheme`.
    pub fn linear_with(
        num_classes: usize,
        input_dim: usize,
        seed: u64,
        scheme: InitScheme,
    ) -> Self {
        match scheme {
            InitScheme::Glorot => Self::linear(num_classes, input_dim, seed),
            InitScheme::FanIn => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let limit = 1.0 / (input_dim as f64).sqrt();
                let weights = uniform_matrix(&mut rng, num_classes, input_dim, limit);
                let bias = uniform_matrix(&mut rng, 1, num_classes, limit)
                    .row(0)
                    .to_owned();
                SoftmaxModel {
                    weights,
                    bias,
                    hidden: None,
                    seed,
                }
            }
        }
    }

    /// Model with one ReLU hidden layer of `width` units; both layers use the same uniform
    /// scheme sized by their fan-in plus fan-out.
    pub fn with_hidden(num_classes: usize, input_dim: usize, width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden_limit = (6.0 / (input_dim + width) as f64).sqrt();
        let hidden = HiddenLayer {
            weights: uniform_matrix(&mut rng, width, input_dim, hidden_limit),
            bias: Array1::zeros(width),
            activation: Activation::Relu,
        };
        let limit = (6.0 / (width + num_classes) as f64).sqrt();
        SoftmaxModel {
            weights: uniform_matrix(&mut rng, num_classes, width, limit),
            bias: Array1::zeros(num_classes),
            hidden: Some(hidden),
            seed,
        }
    }

    pub fn zeros(num_classes: usize, input_dim: usize) -> Self {
        SoftmaxModel {
            weights: Array2::zeros((num_classes, input_dim)),
            bias: Array1::zeros(num_classes),
            hidden: None,
            seed: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn input_dim(&self) -> usize {
        match &self.hidden {
            Some(h) => h.weights.ncols(),
            None => self.weights.ncols(),
        }
    }

    pub fn is_linear(&self) -> bool {
        self.hidden.is_none()
    }

    /// `‖v‖²` over the classifier weights (biases excluded).
    pub fn classifier_norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    /// `‖[v, w]‖²` over every weight matrix (biases excluded).
    pub fn weight_norm_sq(&self) -> f64 {
        self.classifier_norm_sq()
            + self
                .hidden
                .as_ref()
                .map(|h| h.weights.iter().map(|w| w * w).sum::<f64>())
                .unwrap_or(0.0)
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.weights.iter().fold(0.0f64, |m, w| m.max(w.abs()))
    }

    fn check_shapes(&self) -> Result<()> {
        let k = self.num_classes();
        if k < 2 {
            return Err(Error::invalid("model needs at least two classes"));
        }
        if self.bias.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: self.bias.len(),
            });
        }
        if let Some(h) = &self.hidden {
            if h.weights.nrows() != self.weights.ncols() {
                return Err(Error::DimensionMismatch {
                    expected: self.weights.ncols(),
                    found: h.weights.nrows(),
                });
            }
            if h.bias.len() != h.weights.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: h.weights.nrows(),
                    found: h.bias.len(),
                });
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        let x = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let batch = self.forward_batch(x)?;
        let logits = batch.logits.row(0).to_vec();
        let prediction = ProbVector::new(batch.probs.row(0).to_vec())?;
        let hidden = batch
            .hidden
            .map(|(pre, post)| (pre.row(0).to_vec(), post.row(0).to_vec()));
        Ok(Forward {
            logits,
            prediction,
            hidden,
        })
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<BatchForward> {
        self.check_shapes()?;
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        let (features, hidden) = match &self.hidden {
            Some(h) => {
                let mut pre = x.dot(&h.weights.t());
                pre += &h.bias;
                let post = pre.mapv(|v| h.activation.apply(v));
                (post.clone(), Some((pre, post)))
            }
            None => (x.to_owned(), None),
        };
        let mut logits = features.dot(&self.weights.t());
        logits += &self.bias;
        let logits = logits.as_standard_layout().into_owned();
        let mut probs = logits.clone();
        for mut row in probs.axis_iter_mut(Axis(0)) {
            softmax_in_place(row.as_slice_mut().expect("contiguous row"));
        }
        Ok(BatchForward {
            logits,
            probs,
            hidden,
        })
    }

    /// Class probabilities for every row of `x`.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward_batch(x)?.probs)
    }

    /// Hard assignments by argmax, ties to the lowest class index.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        let probs = self.predict_proba(x)?;
        Ok(probs
            .axis_iter(Axis(0))
            .map(|row| crate::simplex::argmax(row.as_slice().expect("contiguous row")))
            .collect())
    }

    /// Gradient for one example given `∂loss/∂logits`.
    pub fn backward(&self, x: &[f64], cache: &Forward, upstream: &[f64]) -> Result<GradientBuffer> {
        let xv =
            ArrayView2::from_shape((1, x.len()), x).map_err(|_| Error::invalid("input row"))?;
        let up = ArrayView2::from_shape((1, upstream.len()), upstream)
            .map_err(|_| Error::invalid("upstream row"))?;
        let hidden = match (&self.hidden, &cache.hidden) {
            (Some(_), Some((pre, post))) => Some((
                Array2::from_shape_vec((1, pre.len()), pre.clone()).expect("shape"),
                Array2::from_shape_vec((1, post.len()), post.clone()).expect("shape"),
            )),
            (Some(_), None) => {
                return Err(Error::invalid(
                    "backward needs the cached hidden activation from forward",
                ))
            }
            (None, _) => None,
        };
        let batch = BatchForward {
            logits: Array2::from_shape_vec((1, cache.logits.len()), cache.logits.clone())
                .expect("shape"),
            probs: Array2::from_shape_vec(
                (1, cache.prediction.len()),
                cache.prediction.as_slice().to_vec(),
            )
            .expect("shape"),
            hidden,
        };
        self.backward_batch(xv, &batch, up)
    }

    /// Sum over the batch of per-example parameter gradients. `upstream` holds
    /// `∂loss/∂logits`, one row per example; any averaging is up to the caller.
    pub fn backward_batch(
        &self,
        x: ArrayView2<'_, f64>,
        cache: &BatchForward,
        upstream: ArrayView2<'_, f64>,
    ) -> Result<GradientBuffer> {
        let k = self.num_classes();
        if upstream.ncols() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: upstream.ncols(),
            });
        }
        if upstream.nrows() != x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                found: upstream.nrows(),
            });
        }
        match (&self.hidden, &cache.hidden) {
            (None, _) => {
                let weights = upstream.t().dot(&x);
                let bias = upstream.sum_axis(Axis(0));
                Ok(GradientBuffer {
                    weights,
                    bias,
                    hidden_weights: None,
                    hidden_bias: None,
                })
            }
            (Some(layer), Some((pre, post))) => {
                let weights = upstream.t().dot(post);
                let bias = upstream.sum_axis(Axis(0));
                let mut delta = upstream.dot(&self.weights);
                Zip::from(&mut delta)
                    .and(pre)
                    .for_each(|d, &p| *d *= layer.activation.derivative(p));
                let hidden_weights = delta.t().dot(&x);
                let hidden_bias = delta.sum_axis(Axis(0));
                Ok(GradientBuffer {
                    weights,
                    bias,
                    hidden_weights: Some(hidden_weights),
                    hidden_bias: Some(hidden_bias),
                })
            }
            (Some(_), None) => Err(Error::invalid(
                "backward needs the cached hidden activation from forward",
            )),
        }
    }

    /// `parameters ← parameters − lr · grads`.
    pub fn sgd_step(&mut self, grads: &GradientBuffer, lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate {lr} must be finite and >= 0"
            )));
        }
        grads.check_finite()?;
        grads.check_shape(self)?;
        self.weights.scaled_add(-lr, &grads.weights);
        self.bias.scaled_add(-lr, &grads.bias);
        if let (Some(h), Some(gw), Some(gb)) =
            (&mut self.hidden, &grads.hidden_weights, &grads.hidden_bias)
        {
            h.weights.scaled_add(-lr, gw);
            h.bias.scaled_add(-lr, gb);
        }
        self.check_finite()
    }

    pub fn check_finite(&self) -> Result<()> {
        if !all_finite(&self.weights) {
            return Err(Error::NonFinite("classifier weights".into()));
        }
        if !all_finite(&self.bias) {
            return Err(Error::NonFinite("classifier bias".into()));
        }
        if let Some(h) = &self.hidden {
            if !all_finite(&h.weights) {
                return Err(Error::NonFinite("hidden weights".into()));
            }
            if !all_finite(&h.bias) {
                return Err(Error::NonFinite("hidden bias".into()));
            }
        }
        Ok(())
    }

    /// Writes the plain-text checkpoint format.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        let mut text = String::new();
        let _ = writeln!(text, "{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}");
        let _ = writeln!(text, "seed {}", self.seed);
        let _ = writeln!(text, "classes {}", self.num_classes());
        let _ = writeln!(text, "input_dim {}", self.input_dim());
        match &self.hidden {
            Some(h) => {
                let _ = writeln!(text, "hidden {} {}", h.weights.nrows(), h.activation.tag());
            }
            None => {
                let _ = writeln!(text, "hidden none");
            }
        }
        write_matrix(&mut text, "weights", self.weights.view());
        write_vector(&mut text, "bias", self.bias.view());
        if let Some(h) = &self.hidden {
            write_matrix(&mut text, "hidden_weights", h.weights.view());
            write_vector(&mut text, "hidden_bias", h.bias.view());
        }
        out.write_all(text.as_bytes())?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_checkpoint(std::io::BufWriter::new(file))
    }

    pub fn read_checkpoint<R: Read>(input: R) -> Result<Self> {
        let reader = BufReader::new(input);
        let mut lines = reader.lines().enumerate();
        let mut next = |expect: &str| -> Result<(usize, Vec<String>)> {
            loop {
                let (n, line) = lines.next().ok_or_else(|| {
                    Error::parse("checkpoint", "end of file", format!("expected {expect}"))
                })?;
                let line = line?;
                let tokens: Vec<String> = line.split_whitespace().map(str::to_owned).collect();
                if !tokens.is_empty() {
                    return Ok((n + 1, tokens));
                }
            }
        };
        let (n, header) = next("header")?;
        if header.len() != 2 || header[0] != CHECKPOINT_MAGIC {
            return Err(Error::parse("checkpoint", format!("line {n}"), "bad magic"));
        }
        if header[1] != format!("v{CHECKPOINT_VERSION}") {
            return Err(Error::parse(
                "checkpoint",
                format!("line {n}"),
                format!("unsupported version {}", header[1]),
            ));
        }
        let seed = keyed_value::<u64>(next("seed")?, "seed")?;
        let classes = keyed_value::<usize>(next("classes")?, "classes")?;
        let input_dim = keyed_value::<usize>(next("input_dim")?, "input_dim")?;
        let (n, hidden_line) = next("hidden")?;
        let hidden_spec = match hidden_line.as_slice() {
            [key, none] if key == "hidden" && none == "none" => None,
            [key, width, act] if key == "hidden" => {
                let width = width
                    .parse::<usize>()
                    .map_err(|e| Error::parse("checkpoint", format!("line {n}"), e.to_string()))?;
                Some((width, act.parse::<Activation>()?))
            }
            _ => {
                return Err(Error::parse(
                    "checkpoint",
                    format!("line {n}"),
                    "bad hidden line",
                ))
            }
        };
        let feature_dim = hidden_spec.map(|(w, _)| w).unwrap_or(input_dim);
        let weights = read_matrix(&mut next, "weights", classes, feature_dim)?;
        let bias = read_vector(&mut next, "bias", classes)?;
        let hidden = match hidden_spec {
            Some((width, activation)) => Some(HiddenLayer {
                weights: read_matrix(&mut next, "hidden_weights", width, input_dim)?,
                bias: read_vector(&mut next, "hidden_bias", width)?,
                activation,
            }),
            None => None,
        };
        let model = SoftmaxModel {
            weights,
            bias,
            hidden,
            seed,
        };
        model.check_shapes()?;
        model.check_finite()?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_checkpoint(std::fs::File::open(path)?)
    }
}

fn keyed_value<T: FromStr>(line: (usize, Vec<String>), key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let (n, tokens) = line;
    match tokens.as_slice() {
        [k, v] if k == key => v
            .parse::<T>()
            .map_err(|e| Error::parse("checkpoint", format!("line {n}"), e.to_string())),
        _ => Err(Error::parse(
            "checkpoint",
            format!("line {n}"),
            format!("expected '{key} <value>'"),
        )),
    }
}

fn write_matrix(text: &mut String, name: &str, m: ArrayView2<'_, f64>) {
    let _ = writeln!(text, "{name} {} {}", m.nrows(), m.ncols());
    for row in m.axis_iter(Axis(0)) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(text, "{}", line.join(" "));
    }
}

fn write_vector(text: &mut String, name: &str, v: ArrayView1<'_, f64>) {
    let _ = writeln!(text, "{name} {}", v.len());
    let line: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
    let _ = writeln!(text, "{}", line.join(" "));
}

fn parse_floats(n: usize, tokens: &[String], expected: usize) -> Result<Vec<f64>> {
    if tokens.len() != expected {
        return Err(Error::parse(
            "checkpoint",
            format!("line {n}"),
            format!("expected {expected} values, found {}", tokens.len()),
        ));
    }
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| Error::parse("checkpoint", format!("line {n}"), e.to_string()))
        })
        .collect()
}

fn read_matrix(
    next: &mut dyn FnMut(&str) -> Result<(usize, Vec<String>)>,
    name: &str,
    rows: usize,
    cols: usize,
) -> Result<Array2<f64>> {
    let (n, header) = next(name)?;
    if header != [name.to_string(), rows.to_string(), cols.to_string()] {
        return Err(Error::parse(
            "checkpoint",
            format!("line {n}"),
            format!("expected '{name} {rows} {cols}'"),
        ));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let (n, tokens) = next(name)?;
        data.extend(parse_floats(n, &tokens, cols)?);
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("shape"))
}

fn read_vector(
    next: &mut dyn FnMut(&str) -> Result<(usize, Vec<String>)>,
    name: &str,
    len: usize,
) -> Result<Array1<f64>> {
    let (n, header) = next(name)?;
    if header != [name.to_string(), len.to_string()] {
        return Err(Error::parse(
            "checkpoint",
            format!("line {n}"),
            format!("expected '{name} {len}'"),
        ));
    }
    let (n, tokens) = next(name)?;
    Ok(Array1::from(parse_floats(n, &tokens, len)?))
}

impl GradientBuffer {
    pub fn zeros_like(model: &SoftmaxModel) -> Self {
        GradientBuffer {
            weights: Array2::zeros(model.weights.raw_dim()),
            bias: Array1::zeros(model.bias.len()),
            hidden_weights: model
                .hidden
                .as_ref()
                .map(|h| Array2::zeros(h.weights.raw_dim())),
            hidden_bias: model.hidden.as_ref().map(|h| Array1::zeros(h.bias.len())),
        }
    }

    pub fn zero(&mut self) {
        self.weights.fill(0.0);
        self.bias.fill(0.0);
        if let Some(w) = &mut self.hidden_weights {
            w.fill(0.0);
        }
        if let Some(b) = &mut self.hidden_bias {
            b.fill(0.0);
        }
    }

    pub fn add_assign(&mut self, other: &GradientBuffer) {
        self.weights += &other.weights;
        self.bias += &other.bias;
        if let (Some(a), Some(b)) = (&mut self.hidden_weights, &other.hidden_weights) {
            *a += b;
        }
        if let (Some(a), Some(b)) = (&mut self.hidden_bias, &other.hidden_bias) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights *= factor;
        self.bias *= factor;
        if let Some(w) = &mut self.hidden_weights {
            *w *= factor;
        }
        if let Some(b) = &mut self.hidden_bias {
            *b *= factor;
        }
    }

    /// Adds the gradient of `coef · ‖v‖²`.
    pub fn add_classifier_decay(&mut self, model: &SoftmaxModel, coef: f64) {
        if coef != 0.0 {
            self.weights.scaled_add(2.0 * coef, &model.weights);
        }
    }

    /// Adds the gradient of `coef · ‖[v, w]‖²`.
    pub fn add_weight_decay(&mut self, model: &SoftmaxModel, coef: f64) {
        self.add_classifier_decay(model, coef);
        if coef != 0.0 {
            if let (Some(g), Some(h)) = (&mut self.hidden_weights, &model.hidden) {
                g.scaled_add(2.0 * coef, &h.weights);
            }
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        let check = |name: &str, finite: bool| {
            if finite {
                Ok(())
            } else {
                Err(Error::NonFinite(format!("gradient of {name}")))
            }
        };
        check("classifier weights", all_finite(&self.weights))?;
        check("classifier bias", all_finite(&self.bias))?;
        if let Some(w) = &self.hidden_weights {
            check("hidden weights", all_finite(w))?;
        }
        if let Some(b) = &self.hidden_bias {
            check("hidden bias", all_finite(b))?;
        }
        Ok(())
    }

    fn check_shape(&self, model: &SoftmaxModel) -> Result<()> {
        let same = self.weights.raw_dim() == model.weights.raw_dim()
            && self.bias.len() == model.bias.len()
            && match (&self.hidden_weights, &model.hidden) {
                (Some(g), Some(h)) => g.raw_dim() == h.weights.raw_dim(),
                (None, None) => true,
                _ => false,
            };
        if same {
            Ok(())
        } else {
            Err(Error::invalid("gradient buffer does not match model shape"))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::invalid(format!("unknown optimizer '{other}'"))),
        }
    }
}

/// First-order optimizer state.
///
/// Adam uses the usual bias-corrected moments:
/// `m ← β₁m + (1−β₁)g`, `s ← β₂s + (1−β₂)g²`,
/// `θ ← θ − lr · m̂ / (sqrt(ŝ) + ε)` with `β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-8`.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam(Adam),
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    step: i32,
    first: GradientBuffer,
    second: GradientBuffer,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, model: &SoftmaxModel) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam(Adam {
                lr,
                step: 0,
                first: GradientBuffer::zeros_like(model),
                second: GradientBuffer::zeros_like(model),
            }),
        }
    }

    pub fn step(&mut self, model: &mut SoftmaxModel, grads: &GradientBuffer) -> Result<()> {
        match self {
            Optimizer::Sgd { lr } => model.sgd_step(grads, *lr),
            Optimizer::Adam(adam) => adam.step(model, grads),
        }
    }
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, model: &mut SoftmaxModel, grads: &GradientBuffer) -> Result<()> {
        grads.check_finite()?;
        grads.check_shape(model)?;
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        let lr = self.lr;
        let update = |param: ArrayViewMutD<'_, f64>,
                      g: ArrayViewD<'_, f64>,
                      m: ArrayViewMutD<'_, f64>,
                      s: ArrayViewMutD<'_, f64>| {
            Zip::from(param)
                .and(g)
                .and(m)
                .and(s)
                .for_each(|p, &g, m, s| {
                    *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                    *s = Self::BETA2 * *s + (1.0 - Self::BETA2) * g * g;
                    *p -= lr * (*m / c1) / ((*s / c2).sqrt() + Self::EPS);
                });
        };
        update(
            model.weights.view_mut().into_dyn(),
            grads.weights.view().into_dyn(),
            self.first.weights.view_mut().into_dyn(),
            self.second.weights.view_mut().into_dyn(),
        );
        update(
            model.bias.view_mut().into_dyn(),
            grads.bias.view().into_dyn(),
            self.first.bias.view_mut().into_dyn(),
            self.second.bias.view_mut().into_dyn(),
        );
        if let Some(h) = &mut model.hidden {
            let gw = grads.hidden_weights.as_ref().expect("shape checked");
            let gb = grads.hidden_bias.as_ref().expect("shape checked");
            let fw = self.first.hidden_weights.as_mut().expect("shape checked");
            let sw = self.second.hidden_weights.as_mut().expect("shape checked");
            update(
                h.weights.view_mut().into_dyn(),
                gw.view().into_dyn(),
                fw.view_mut().into_dyn(),
                sw.view_mut().into_dyn(),
            );
            let fb = self.first.hidden_bias.as_mut().expect("shape checked");
            let sb = self.second.hidden_bias.as_mut().expect("shape checked");
            update(
                h.bias.view_mut().into_dyn(),
                gb.view().into_dyn(),
                fb.view_mut().into_dyn(),
                sb.view_mut().into_dyn(),
            );
        }
        model.check_finite()
    }
}
