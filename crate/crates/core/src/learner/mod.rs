//! The learner network: a small feature extractor with either one shared
//! classification head (Class-IL) or one head per task (Task-IL).

mod checkpoint;
mod confusion;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use confusion::{rebuild_confusion_matrix, ConfusionMatrix};

use crate::autodiff::{GradientMap, Graph, NodeId};
use crate::error::{Error, Result};
use crate::optim;
use crate::tasks::ImageShape;
use crate::tensor::Tensor;

/// Leaf name reserved for the network input.
pub const INPUT_LEAF: &str = "input";

/// One backbone layer. Dense layers flatten their input implicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Dense {
        units: usize,
    },
    /// Stride-1 convolution with `kernel / 2` zero padding.
    Conv {
        filters: usize,
        kernel: usize,
    },
    Relu,
    AvgPool {
        size: usize,
    },
    Flatten,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Dense { units } => write!(f, "dense:{units}"),
            Layer::Conv { filters, kernel } => write!(f, "conv:{filters}:{kernel}"),
            Layer::Relu => f.write_str("relu"),
            Layer::AvgPool { size } => write!(f, "avgpool:{size}"),
            Layer::Flatten => f.write_str("flatten"),
        }
    }
}

impl FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize| -> Result<usize> {
            parts
                .get(i)
                .and_then(|p| p.parse::<usize>().ok())
                .filter(|&v| v > 0)
                .ok_or_else(|| Error::invalid(format!("layer `{s}`: expected a positive integer")))
        };
        let layer = match parts[0] {
            "dense" if parts.len() == 2 => Layer::Dense { units: num(1)? },
            "conv" if parts.len() == 3 => Layer::Conv {
                filters: num(1)?,
                kernel: num(2)?,
            },
            "relu" if parts.len() == 1 => Layer::Relu,
            "avgpool" if parts.len() == 2 => Layer::AvgPool { size: num(1)? },
            "flatten" if parts.len() == 1 => Layer::Flatten,
            _ => return Err(Error::invalid(format!("unknown layer `{s}`"))),
        };
        Ok(layer)
    }
}

/// Parses a comma separated layer list such as `conv:16:3,relu,avgpool:2`.
pub fn parse_backbone(s: &str) -> Result<Vec<Layer>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect()
}

pub fn format_backbone(layers: &[Layer]) -> String {
    layers
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// Default desk-scale backbone (the head is appended separately).
pub fn default_backbone() -> Vec<Layer> {
    vec![
        Layer::Conv {
            filters: 16,
            kernel: 3,
        },
        Layer::Relu,
        Layer::AvgPool { size: 2 },
        Layer::Conv {
            filters: 32,
            kernel: 3,
        },
        Layer::Relu,
        Layer::AvgPool { size: 2 },
        Layer::Flatten,
        Layer::Dense { units: 128 },
        Layer::Relu,
    ]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Heads {
    /// One head over every class of the stream (Class-IL).
    Single(usize),
    /// One head per task with the given widths (Task-IL).
    Multi(Vec<usize>),
}

impl Heads {
    pub fn total_classes(&self) -> usize {
        match self {
            Heads::Single(n) => *n,
            Heads::Multi(w) => w.iter().sum(),
        }
    }

    fn widths(&self) -> Vec<usize> {
        match self {
            Heads::Single(n) => vec![*n],
            Heads::Multi(w) => w.clone(),
        }
    }
}

impl fmt::Display for Heads {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Heads::Single(n) => write!(f, "single:{n}"),
            Heads::Multi(w) => {
                let w: Vec<String> = w.iter().map(ToString::to_string).collect();
                write!(f, "multi:{}", w.join(","))
            }
        }
    }
}

impl FromStr for Heads {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("bad head spec `{s}`"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let nums: Vec<usize> = rest
            .split(',')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        match kind {
            "single" if nums.len() == 1 => Ok(Heads::Single(nums[0])),
            "multi" => Ok(Heads::Multi(nums)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub input_shape: ImageShape,
    pub backbone: Vec<Layer>,
    pub heads: Heads,
    pub seed: u64,
}

/// Which logits a query returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputScope {
    /// Every seen class, in `classes_seen` order: the seen columns of the
    /// shared head (Class-IL) or the seen heads concatenated (Task-IL).
    Seen,
    /// The full width of one task head (Task-IL only).
    Head(usize),
}

#[derive(Debug, Clone)]
enum Shape {
    Image([usize; 3]),
    Flat(usize),
}

impl Shape {
    fn size(&self) -> usize {
        match self {
            Shape::Image(s) => s.iter().product(),
            Shape::Flat(n) => *n,
        }
    }
}

/// Learner parameters plus the bookkeeping of what has been learned.
#[derive(Debug, Clone)]
pub struct Learner {
    config: LearnerConfig,
    params: BTreeMap<String, Arc<Tensor>>,
    feature_dim: usize,
    classes_seen: Vec<usize>,
    task_classes: Vec<Vec<usize>>,
    confusion: Option<ConfusionMatrix>,
}

fn weight_name(prefix: &str) -> String {
    format!("{prefix}.weight")
}

fn bias_name(prefix: &str) -> String {
    format!("{prefix}.bias")
}

fn head_prefix(head: usize) -> String {
    format!("head.{head}")
}

/// Parameter leaves of one learner bound into a graph.
#[derive(Debug, Clone)]
pub struct BoundParams(HashMap<String, NodeId>);

impl BoundParams {
    fn get(&self, name: &str) -> Result<NodeId> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| Error::NotFound(format!("parameter `{name}`")))
    }
}

impl Learner {
    /// Initializes parameters with fan-in scaled uniform weights
    /// `U(-√(6/fan_in), √(6/fan_in))` and zero biases.
    pub fn build(config: LearnerConfig) -> Result<Learner> {
        if config.backbone.is_empty() {
            return Err(Error::invalid("backbone has no layers"));
        }
        let widths = config.heads.widths();
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::invalid("every head needs at least one class"));
        }
        if config.input_shape.contains(&0) {
            return Err(Error::invalid("input shape has a zero dimension"));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = BTreeMap::new();
        let mut shape = Shape::Image(config.input_shape);
        for (i, layer) in config.backbone.iter().enumerate() {
            let prefix = format!("backbone.{i}");
            shape = match (*layer, &shape) {
                (Layer::Dense { units }, s) => {
                    let fan_in = s.size();
                    params.insert(
                        weight_name(&prefix),
                        init_uniform(&mut rng, vec![units, fan_in], fan_in),
                    );
                    params.insert(bias_name(&prefix), Arc::new(Tensor::zeros(&[units])));
                    Shape::Flat(units)
                }
                (Layer::Conv { filters, kernel }, Shape::Image([c, h, w])) => {
                    let pad = kernel / 2;
                    if h + 2 * pad < kernel || w + 2 * pad < kernel {
                        return Err(Error::invalid(format!(
                            "layer {i}: kernel {kernel} too large"
                        )));
                    }
                    let fan_in = c * kernel * kernel;
                    params.insert(
                        weight_name(&prefix),
                        init_uniform(&mut rng, vec![filters, *c, kernel, kernel], fan_in),
                    );
                    params.insert(bias_name(&prefix), Arc::new(Tensor::zeros(&[filters])));
                    Shape::Image([filters, h + 2 * pad + 1 - kernel, w + 2 * pad + 1 - kernel])
                }
                (Layer::AvgPool { size }, Shape::Image([c, h, w])) => {
                    if *h < size || *w < size {
                        return Err(Error::invalid(format!(
                            "layer {i}: pool {size} larger than input"
                        )));
                    }
                    Shape::Image([*c, h / size, w / size])
                }
                (Layer::Relu, s) => s.clone(),
                (Layer::Flatten, s) => Shape::Flat(s.size()),
                (l, Shape::Flat(_)) => {
                    return Err(Error::invalid(format!(
                        "layer {i} ({l}) needs an image input"
                    )));
                }
            };
        }
        let feature_dim = shape.size();
        for (h, &width) in widths.iter().enumerate() {
            let prefix = head_prefix(h);
            params.insert(
                weight_name(&prefix),
                init_uniform(&mut rng, vec![width, feature_dim], feature_dim),
            );
            params.insert(bias_name(&prefix), Arc::new(Tensor::zeros(&[width])));
        }
        Ok(Learner {
            config,
            params,
            feature_dim,
            classes_seen: Vec::new(),
            task_classes: Vec::new(),
            confusion: None,
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn is_multi_head(&self) -> bool {
        matches!(self.config.heads, Heads::Multi(_))
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn classes_seen(&self) -> &[usize] {
        &self.classes_seen
    }

    /// Class lists of the tasks learned so far, each sorted.
    pub fn task_classes(&self) -> &[Vec<usize>] {
        &self.task_classes
    }

    pub fn confusion(&self) -> Option<&ConfusionMatrix> {
        self.confusion.as_ref()
    }

    pub fn set_confusion(&mut self, cm: Option<ConfusionMatrix>) {
        self.confusion = cm;
    }

    pub fn params(&self) -> &BTreeMap<String, Arc<Tensor>> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|t| &**t)
    }

    pub fn param_names(&self) -> Vec<&str> {
        self.params.keys().map(String::as_str).collect()
    }

    /// Overwrites a parameter with a tensor of the same shape.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::NotFound(format!("parameter `{name}`")))?;
        if slot.shape() != value.shape() {
            return Err(Error::invalid(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = Arc::new(value);
        Ok(())
    }

    /// Hash of every parameter bit pattern; equal learners hash equally.
    pub fn checksum(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (name, t) in &self.params {
            name.hash(&mut h);
            t.shape().hash(&mut h);
            for v in t.data() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Registers the classes of a new task. Class-IL requires every id to fit
    /// the shared head; Task-IL claims the next head, whose width must match.
    pub fn begin_task(&mut self, classes: &[usize]) -> Result<()> {
        let mut sorted = classes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.is_empty() || sorted.len() != classes.len() {
            return Err(Error::invalid(format!(
                "task classes {classes:?} must be distinct and non-empty"
            )));
        }
        if let Some(c) = sorted.iter().find(|c| self.classes_seen.contains(c)) {
            return Err(Error::invalid(format!("class {c} was already learned")));
        }
        match &self.config.heads {
            Heads::Single(width) => {
                if let Some(c) = sorted.iter().find(|&&c| c >= *width) {
                    return Err(Error::invalid(format!(
                        "class {c} does not fit a head of width {width}"
                    )));
                }
            }
            Heads::Multi(widths) => {
                let t = self.task_classes.len();
                match widths.get(t) {
                    Some(&w) if w == sorted.len() => {}
                    Some(&w) => {
                        return Err(Error::invalid(format!(
                            "task {t} has {} classes but head {t} has width {w}",
                            sorted.len()
                        )))
                    }
                    None => return Err(Error::invalid(format!("no head left for task {t}"))),
                }
            }
        }
        self.classes_seen.extend_from_slice(&sorted);
        self.task_classes.push(sorted);
        Ok(())
    }

    /// Task index holding `class`, if learned.
    pub fn task_of(&self, class: usize) -> Option<usize> {
        self.task_classes.iter().position(|cs| cs.contains(&class))
    }

    /// Global class ids of the columns returned for `scope`.
    pub fn scope_classes(&self, scope: OutputScope) -> Result<Vec<usize>> {
        match scope {
            OutputScope::Seen => Ok(self.classes_seen.clone()),
            OutputScope::Head(h) => {
                if !self.is_multi_head() {
                    return Err(Error::invalid("head scopes need a multi-head learner"));
                }
                self.task_classes
                    .get(h)
                    .cloned()
                    .ok_or_else(|| Error::NotFound(format!("head {h} has no learned task")))
            }
        }
    }

    /// Scope used for recovery and CM bookkeeping of `class`.
    pub fn scope_of(&self, class: usize) -> Result<OutputScope> {
        let task = self
            .task_of(class)
            .ok_or_else(|| Error::NotFound(format!("class {class} has not been learned")))?;
        Ok(if self.is_multi_head() {
            OutputScope::Head(task)
        } else {
            OutputScope::Seen
        })
    }

    /// Adds every parameter to `graph` as a named leaf.
    pub fn bind(&self, graph: &mut Graph) -> Result<BoundParams> {
        let mut ids = HashMap::with_capacity(self.params.len());
        for (name, t) in &self.params {
            ids.insert(name.clone(), graph.leaf(name.clone(), Arc::clone(t))?);
        }
        Ok(BoundParams(ids))
    }

    /// Backbone features of a `[n, c, h, w]` input node.
    pub fn features(&self, g: &mut Graph, p: &BoundParams, x: NodeId) -> Result<NodeId> {
        let xs = g.value(x).shape();
        if xs.len() != 4 || xs[1..] != self.config.input_shape {
            return Err(Error::invalid(format!(
                "input shape {xs:?} does not match [n, {:?}]",
                self.config.input_shape
            )));
        }
        let mut h = x;
        for (i, layer) in self.config.backbone.iter().enumerate() {
            let prefix = format!("backbone.{i}");
            h = match *layer {
                Layer::Dense { .. } => {
                    let (w, b) = (p.get(&weight_name(&prefix))?, p.get(&bias_name(&prefix))?);
                    g.dense(h, w, b)?
                }
                Layer::Conv { kernel, .. } => {
                    let (w, b) = (p.get(&weight_name(&prefix))?, p.get(&bias_name(&prefix))?);
                    g.conv2d(h, w, b, kernel / 2)?
                }
                Layer::Relu => g.relu(h)?,
                Layer::AvgPool { size } => g.avg_pool(h, size)?,
                Layer::Flatten => g.flatten(h)?,
            };
        }
        if g.value(h).rank() != 2 {
            h = g.flatten(h)?;
        }
        Ok(h)
    }

    /// Full-width logits of head `head` (always 0 for a single head).
    pub fn head_logits(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        feats: NodeId,
        head: usize,
    ) -> Result<NodeId> {
        let prefix = head_prefix(head);
        let (w, b) = (p.get(&weight_name(&prefix))?, p.get(&bias_name(&prefix))?);
        g.dense(feats, w, b)
    }

    /// Logits restricted to `scope`.
    pub fn scope_logits(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        feats: NodeId,
        scope: OutputScope,
    ) -> Result<NodeId> {
        match (scope, &self.config.heads) {
            (OutputScope::Head(h), Heads::Multi(_)) => {
                self.scope_classes(scope)?;
                self.head_logits(g, p, feats, h)
            }
            (OutputScope::Head(_), Heads::Single(_)) => {
                Err(Error::invalid("head scopes need a multi-head learner"))
            }
            (OutputScope::Seen, _) if self.classes_seen.is_empty() => {
                Err(Error::InvalidState("no classes learned yet".into()))
            }
            (OutputScope::Seen, Heads::Single(_)) => {
                let full = self.head_logits(g, p, feats, 0)?;
                g.select_columns(full, &self.classes_seen)
            }
            (OutputScope::Seen, Heads::Multi(_)) => {
                let parts = (0..self.task_classes.len())
                    .map(|h| self.head_logits(g, p, feats, h))
                    .collect::<Result<Vec<_>>>()?;
                g.concat_columns(&parts)
            }
        }
    }

    fn as_batch(&self, x: &Tensor) -> Result<Tensor> {
        match x.rank() {
            3 => x.reshape([&[1][..], x.shape()].concat()),
            4 => Ok(x.clone()),
            _ => Err(Error::invalid(format!(
                "expected an image or image batch, got {:?}",
                x.shape()
            ))),
        }
    }

    fn eval_chunks(
        &self,
        x: &Tensor,
        f: impl Fn(&mut Graph, &BoundParams, NodeId) -> Result<NodeId>,
    ) -> Result<Tensor> {
        const CHUNK: usize = 512;
        let x = self.as_batch(x)?;
        let n = x.shape()[0];
        let per = x.len() / n;
        let mut rows = Vec::new();
        let mut width = 0;
        for start in (0..n).step_by(CHUNK) {
            let end = (start + CHUNK).min(n);
            let mut shape = x.shape().to_vec();
            shape[0] = end - start;
            let chunk = Tensor::new(shape, x.data()[start * per..end * per].to_vec())?;
            let mut g = Graph::new();
            let p = self.bind(&mut g)?;
            let input = g.constant(chunk)?;
            let out = f(&mut g, &p, input)?;
            width = g.value(out).shape()[1];
            rows.extend_from_slice(g.value(out).data());
        }
        Tensor::new(vec![n, width], rows)
    }

    /// Raw logits of one image `[c, h, w]` or a batch `[n, c, h, w]`.
    ///
    /// `head` must be given exactly when the learner has one head per task.
    /// The Class-IL result spans the whole shared head.
    pub fn predict_logits(&self, x: &Tensor, head: Option<usize>) -> Result<Tensor> {
        let head = match (head, &self.config.heads) {
            (None, Heads::Single(_)) => 0,
            (Some(h), Heads::Multi(w)) if h < w.len() => h,
            (Some(h), Heads::Multi(_)) => return Err(Error::invalid(format!("no head {h}"))),
            (None, Heads::Multi(_)) => {
                return Err(Error::invalid("multi-head learner needs a head index"))
            }
            (Some(_), Heads::Single(_)) => {
                return Err(Error::invalid("single-head learner takes no head index"))
            }
        };
        self.eval_chunks(x, |g, p, input| {
            let f = self.features(g, p, input)?;
            self.head_logits(g, p, f, head)
        })
    }

    /// Logits over `scope` for one image or a batch.
    pub fn scope_predict(&self, x: &Tensor, scope: OutputScope) -> Result<Tensor> {
        self.eval_chunks(x, |g, p, input| {
            let f = self.features(g, p, input)?;
            self.scope_logits(g, p, f, scope)
        })
    }

    /// Logits over every seen class, in `classes_seen` order.
    pub fn seen_logits(&self, x: &Tensor) -> Result<Tensor> {
        self.scope_predict(x, OutputScope::Seen)
    }

    /// Predicted global class per image: argmax over the seen classes
    /// (Class-IL) or within the head of the given task (Task-IL).
    pub fn predict_classes(&self, x: &Tensor, task: Option<usize>) -> Result<Vec<usize>> {
        let scope = match (task, self.is_multi_head()) {
            (Some(t), true) => OutputScope::Head(t),
            (None, false) => OutputScope::Seen,
            (None, true) => return Err(Error::invalid("Task-IL prediction needs a task index")),
            (Some(_), false) => OutputScope::Seen,
        };
        let classes = self.scope_classes(scope)?;
        let logits = self.scope_predict(x, scope)?;
        let (n, _) = logits.rows_cols();
        Ok((0..n).map(|r| classes[argmax(logits.row(r))]).collect())
    }

    /// Final-layer class similarity for `class`: a softmax over cosine
    /// similarities between its weight row and every row of the classes
    /// it competes with (all seen classes, or its own head in Task-IL).
    pub fn class_similarity_alpha(&self, class: usize) -> Result<Vec<f64>> {
        let scope = self.scope_of(class)?;
        let classes = self.scope_classes(scope)?;
        let (head, rows): (usize, Vec<usize>) = match scope {
            OutputScope::Seen => (0, classes.clone()),
            OutputScope::Head(h) => (h, (0..classes.len()).collect()),
        };
        let w = self
            .param(&weight_name(&head_prefix(head)))
            .expect("head weights exist");
        let dim = w.shape()[1];
        let row = |r: usize| &w.data()[r * dim..(r + 1) * dim];
        let me = rows[classes
            .iter()
            .position(|&c| c == class)
            .expect("class in scope")];
        let cos: Vec<f64> = rows.iter().map(|&r| cosine(row(me), row(r))).collect();
        let logits = Tensor::from_vec(cos)?;
        Ok(crate::autodiff::softmax_with_temperature(&logits, 1.0)?.into_data())
    }

    /// One SGD step on the parameters named in `grads`.
    pub fn sgd_step(&mut self, grads: &GradientMap, lr: f64) -> Result<()> {
        for (name, g) in grads.iter() {
            let Some(slot) = self.params.get_mut(name) else {
                continue;
            };
            let t = Arc::make_mut(slot);
            optim::sgd_step(t.data_mut(), g.data(), lr);
            if !t.is_finite() {
                return Err(Error::NonFinite(format!(
                    "parameter `{name}` after SGD step"
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn from_parts(
        config: LearnerConfig,
        params: BTreeMap<String, Arc<Tensor>>,
        classes_seen: Vec<usize>,
        task_classes: Vec<Vec<usize>>,
        confusion: Option<ConfusionMatrix>,
    ) -> Result<Learner> {
        let template = Learner::build(config)?;
        if template.params.len() != params.len() {
            return Err(Error::Format(
                "checkpoint parameter set does not match its config".into(),
            ));
        }
        for (name, t) in &template.params {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                _ => {
                    return Err(Error::Format(format!(
                        "checkpoint parameter `{name}` missing or misshapen"
                    )))
                }
            }
        }
        Ok(Learner {
            params,
            classes_seen,
            task_classes,
            confusion,
            ..template
        })
    }
}

fn init_uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Arc<Tensor> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Arc::new(Tensor::from_parts(shape, data))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
