//! In-memory CNN architecture graph: parsing, validation, spatial-size
//! derivation and channel rewriting.
//!
//! A model document lists layers in topological order. Only conv, depthwise
//! conv and linear layers own an output width; every other kind passes the
//! channel count of its input through. Batch-norm and activations are not
//! represented: a BN is implied after every conv and only shows up through
//! importance statistics.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::{couple_channels, CouplingClasses};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Input,
    Conv,
    DepthwiseConv,
    Linear,
    Pool,
    Add,
    GlobalPool,
    Output,
}

impl LayerKind {
    /// Conv, depthwise conv and linear layers carry a channel count `c_i`.
    pub fn is_prunable(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::DepthwiseConv | LayerKind::Linear)
    }

    fn has_window(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::DepthwiseConv | LayerKind::Pool)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Input => "input",
            LayerKind::Conv => "conv",
            LayerKind::DepthwiseConv => "depthwise_conv",
            LayerKind::Linear => "linear",
            LayerKind::Pool => "pool",
            LayerKind::Add => "add",
            LayerKind::GlobalPool => "global_pool",
            LayerKind::Output => "output",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "input" => LayerKind::Input,
            "conv" => LayerKind::Conv,
            "depthwise_conv" => LayerKind::DepthwiseConv,
            "linear" => LayerKind::Linear,
            "pool" => LayerKind::Pool,
            "add" => LayerKind::Add,
            "global_pool" => LayerKind::GlobalPool,
            "output" => LayerKind::Output,
            other => return Err(Error::parse("kind", format!("unknown layer kind `{other}`"))),
        })
    }
}

/// One layer with its resolved channel counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// `(kh, kw)`; `(1, 1)` for kinds without a spatial window.
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub predecessors: Vec<String>,
}

/// Serialized form of a model: `{input_shape: [c,h,w], layers: [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDoc {
    pub name: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<[usize; 2]>,
    #[serde(default)]
    pub predecessors: Vec<String>,
}

/// Where the channels of a tensor come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) enum Producer {
    NetworkInput,
    Layer(usize),
}

/// Validated, immutable architecture graph in topological order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelGraph {
    input_shape: (usize, usize, usize),
    layers: Vec<LayerSpec>,
    preds: Vec<Vec<usize>>,
    spatial: Vec<(usize, usize)>,
    index: HashMap<String, usize>,
    classifier: Vec<bool>,
}

/// Parses and validates a JSON model document.
pub fn parse_model(text: &str) -> Result<ModelGraph> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| schema_error(&e))?;
    ModelGraph::from_doc(&doc)
}

fn schema_error(e: &serde_json::Error) -> Error {
    let msg = e.to_string();
    // serde_json reports the offending key in backticks for missing/unknown fields
    let field = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.contains("field"))
        .unwrap_or("document")
        .to_string();
    Error::Parse { field, message: msg }
}

impl ModelGraph {
    pub fn from_doc(doc: &ModelDoc) -> Result<Self> {
        if doc.layers.is_empty() {
            return Err(Error::parse("layers", "layer list is empty"));
        }
        let [c, h, w] = doc.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::parse("input_shape", "all dimensions must be positive"));
        }

        let mut index = HashMap::with_capacity(doc.layers.len());
        for (i, l) in doc.layers.iter().enumerate() {
            if l.name.is_empty() {
                return Err(Error::parse(format!("layers[{i}].name"), "empty layer name"));
            }
            if index.insert(l.name.clone(), i).is_some() {
                return Err(Error::parse(
                    format!("layers[{i}].name"),
                    format!("duplicate layer name `{}`", l.name),
                ));
            }
        }

        let mut kinds = Vec::with_capacity(doc.layers.len());
        for (i, l) in doc.layers.iter().enumerate() {
            let kind: LayerKind = l
                .kind
                .parse()
                .map_err(|_| Error::parse(format!("layers[{i}].kind"), format!("unknown layer kind `{}`", l.kind)))?;
            kinds.push(kind);
        }
        let inputs = kinds.iter().filter(|k| **k == LayerKind::Input).count();
        if inputs != 1 {
            return Err(Error::Graph(format!(
                "expected exactly one input layer, found {inputs}"
            )));
        }

        let mut preds = Vec::with_capacity(doc.layers.len());
        for (i, l) in doc.layers.iter().enumerate() {
            let mut resolved = Vec::with_capacity(l.predecessors.len());
            for p in &l.predecessors {
                let Some(&j) = index.get(p) else {
                    return Err(Error::Graph(format!(
                        "dangling predecessor `{p}` of layer `{}`",
                        l.name
                    )));
                };
                if j >= i {
                    return Err(order_error(doc, &index));
                }
                resolved.push(j);
            }
            preds.push(resolved);
        }

        let mut layers: Vec<LayerSpec> = Vec::with_capacity(doc.layers.len());
        let mut spatial: Vec<(usize, usize)> = Vec::with_capacity(doc.layers.len());
        for (i, l) in doc.layers.iter().enumerate() {
            let kind = kinds[i];
            let p = &preds[i];
            let arity_ok = match kind {
                LayerKind::Input => p.is_empty(),
                LayerKind::Add => p.len() >= 2,
                _ => p.len() == 1,
            };
            if !arity_ok {
                let want = match kind {
                    LayerKind::Input => "no predecessors",
                    LayerKind::Add => "at least two predecessors",
                    _ => "exactly one predecessor",
                };
                return Err(Error::Graph(format!(
                    "{kind} layer `{}` requires {want}, has {}",
                    l.name,
                    p.len()
                )));
            }

            let field = |f: &str| format!("layers[{i}].{f}");
            let pair = |v: Option<[usize; 2]>, f: &str| -> Result<Option<(usize, usize)>> {
                match v {
                    Some([a, b]) if a == 0 || b == 0 => Err(Error::parse(field(f), "values must be positive")),
                    Some([a, b]) => Ok(Some((a, b))),
                    None => Ok(None),
                }
            };
            let kernel_given = pair(l.kernel, "kernel")?;
            let stride_given = pair(l.stride, "stride")?;
            if !kind.has_window() && (kernel_given.is_some() || stride_given.is_some()) {
                return Err(Error::parse(
                    field("kernel"),
                    format!("{kind} layers take no kernel or stride"),
                ));
            }
            let stride = stride_given.unwrap_or((1, 1));
            let kernel = match kind {
                LayerKind::Conv | LayerKind::DepthwiseConv => {
                    kernel_given.ok_or_else(|| Error::parse(field("kernel"), "required for conv layers"))?
                }
                LayerKind::Pool => kernel_given.unwrap_or(stride),
                _ => (1, 1),
            };

            let in_channels = match kind {
                LayerKind::Input => c,
                _ => layers[p[0]].out_channels,
            };
            let in_spatial = match kind {
                LayerKind::Input => (h, w),
                _ => spatial[p[0]],
            };

            if kind == LayerKind::Add {
                for &q in &p[1..] {
                    if layers[q].out_channels != in_channels {
                        return Err(Error::Graph(format!(
                            "add `{}`: input `{}` has {} channels but `{}` has {}",
                            l.name, layers[q].name, layers[q].out_channels, layers[p[0]].name, in_channels
                        )));
                    }
                    if spatial[q] != in_spatial {
                        return Err(Error::Graph(format!(
                            "add `{}`: input `{}` is {}x{} but `{}` is {}x{}",
                            l.name,
                            layers[q].name,
                            spatial[q].0,
                            spatial[q].1,
                            layers[p[0]].name,
                            in_spatial.0,
                            in_spatial.1
                        )));
                    }
                }
            }

            let derived = match kind {
                LayerKind::Conv | LayerKind::Linear => None,
                LayerKind::Input => Some(c),
                _ => Some(in_channels),
            };
            let out_channels = match (derived, l.out_channels) {
                (None, Some(0)) => return Err(Error::parse(field("out_channels"), "must be positive")),
                (None, Some(v)) => v,
                (None, None) => {
                    return Err(Error::parse(
                        field("out_channels"),
                        format!("required for {kind} layers"),
                    ))
                }
                (Some(d), Some(v)) if v != d => {
                    let why = if kind == LayerKind::DepthwiseConv {
                        format!("depthwise conv must keep in_channels == out_channels ({d})")
                    } else {
                        format!("{kind} layer output is fixed at {d} channels")
                    };
                    return Err(Error::parse(field("out_channels"), why));
                }
                (Some(d), _) => d,
            };

            let out_spatial = match kind {
                LayerKind::Conv | LayerKind::DepthwiseConv | LayerKind::Pool => {
                    let s = (in_spatial.0 / stride.0, in_spatial.1 / stride.1);
                    if s.0 == 0 || s.1 == 0 {
                        return Err(Error::Graph(format!(
                            "layer `{}` reduces {}x{} to an empty feature map",
                            l.name, in_spatial.0, in_spatial.1
                        )));
                    }
                    s
                }
                LayerKind::GlobalPool | LayerKind::Linear => (1, 1),
                _ => in_spatial,
            };

            layers.push(LayerSpec {
                name: l.name.clone(),
                kind,
                in_channels,
                out_channels,
                kernel,
                stride,
                predecessors: l.predecessors.clone(),
            });
            spatial.push(out_spatial);
        }

        let mut consumers = vec![Vec::new(); layers.len()];
        for (i, p) in preds.iter().enumerate() {
            for &j in p {
                consumers[j].push(i);
            }
        }
        let classifier = layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                l.kind == LayerKind::Linear && consumers[i].iter().all(|&j| layers[j].kind == LayerKind::Output)
            })
            .collect();

        Ok(ModelGraph {
            input_shape: (c, h, w),
            layers,
            preds,
            spatial,
            index,
            classifier,
        })
    }

    pub fn to_doc(&self) -> ModelDoc {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let window = l.kind.has_window();
                LayerDoc {
                    name: l.name.clone(),
                    kind: l.kind.as_str().to_string(),
                    out_channels: l.kind.is_prunable().then_some(l.out_channels),
                    kernel: window.then_some([l.kernel.0, l.kernel.1]),
                    stride: window.then_some([l.stride.0, l.stride.1]),
                    predecessors: l.predecessors.clone(),
                }
            })
            .collect();
        let (c, h, w) = self.input_shape;
        ModelDoc {
            input_shape: [c, h, w],
            layers,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("model document serializes")
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.index.get(name).map(|&i| &self.layers[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Output spatial size `(h, w)` of the layer at `idx`.
    pub fn out_spatial(&self, idx: usize) -> (usize, usize) {
        self.spatial[idx]
    }

    pub fn predecessor_indices(&self, idx: usize) -> &[usize] {
        &self.preds[idx]
    }

    /// Number of prunable layers (`N`).
    pub fn num_prunable(&self) -> usize {
        self.layers.iter().filter(|l| l.kind.is_prunable()).count()
    }

    pub fn prunable_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind.is_prunable())
            .map(|(i, _)| i)
    }

    /// The final classifier: a linear layer feeding only output layers. Its
    /// width is the class count and never changes.
    pub fn is_classifier(&self, idx: usize) -> bool {
        self.classifier[idx]
    }

    /// Prunable layers whose output channels determine the tensor produced by
    /// layer `idx`, looking through pass-through layers.
    pub(crate) fn producers(&self, idx: usize) -> Vec<Producer> {
        let mut out = Vec::new();
        let mut stack = vec![idx];
        while let Some(i) = stack.pop() {
            match self.layers[i].kind {
                LayerKind::Input => out.push(Producer::NetworkInput),
                k if k.is_prunable() => out.push(Producer::Layer(i)),
                _ => stack.extend(self.preds[i].iter().rev()),
            }
        }
        out
    }

    /// Dense per-layer output widths of the unpruned graph.
    pub(crate) fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.out_channels).collect()
    }

    /// Resolves `(in, out)` channels of every layer given the widths of conv
    /// and linear layers in `out`. Entries of `out` for other kinds are ignored.
    pub(crate) fn propagate(&self, out: &[usize]) -> Vec<(usize, usize)> {
        let mut io: Vec<(usize, usize)> = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let inc = match l.kind {
                LayerKind::Input => self.input_shape.0,
                _ => io[self.preds[i][0]].1,
            };
            let o = match l.kind {
                LayerKind::Conv | LayerKind::Linear => out[i],
                _ => inc,
            };
            io.push((inc, o));
        }
        io
    }

    /// Rebuilds the graph with conv/linear widths from `out`.
    pub(crate) fn with_widths(&self, out: &[usize]) -> ModelGraph {
        let io = self.propagate(out);
        let mut g = self.clone();
        for (l, (i, o)) in g.layers.iter_mut().zip(io) {
            l.in_channels = i;
            l.out_channels = o;
        }
        g
    }
}

fn order_error(doc: &ModelDoc, index: &HashMap<String, usize>) -> Error {
    // A forward reference is either a cycle or a misordered (but acyclic) file.
    let n = doc.layers.len();
    let adj: Vec<Vec<usize>> = doc
        .layers
        .iter()
        .map(|l| l.predecessors.iter().filter_map(|p| index.get(p).copied()).collect())
        .collect();
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let mut mark = vec![Mark::New; n];
    for root in 0..n {
        if mark[root] != Mark::New {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        mark[root] = Mark::Active;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if let Some(&u) = adj[v].get(*next) {
                *next += 1;
                match mark[u] {
                    Mark::Active => return Error::Graph(format!("cycle through layer `{}`", doc.layers[u].name)),
                    Mark::New => {
                        mark[u] = Mark::Active;
                        stack.push((u, 0));
                    }
                    Mark::Done => {}
                }
            } else {
                mark[v] = Mark::Done;
                stack.pop();
            }
        }
    }
    let (i, l) = doc
        .layers
        .iter()
        .enumerate()
        .find(|(i, l)| l.predecessors.iter().any(|p| index[p] >= *i))
        .expect("a forward reference exists");
    let p = l.predecessors.iter().find(|p| index[*p] >= i).unwrap();
    Error::Graph(format!(
        "layers are not in topological order: `{}` appears before its predecessor `{p}`",
        l.name
    ))
}

/// Output widths of every prunable layer, keyed by layer name in graph order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelConfig(IndexMap<String, usize>);

impl ChannelConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// `c_i = C_i` for every prunable layer.
    pub fn identity(graph: &ModelGraph) -> Self {
        Self::from_dense(graph, &graph.widths())
    }

    pub fn get(&self, layer: &str) -> Option<usize> {
        self.0.get(layer).copied()
    }

    pub fn insert(&mut self, layer: impl Into<String>, channels: usize) -> Option<usize> {
        self.0.insert(layer.into(), channels)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub(crate) fn from_dense(graph: &ModelGraph, widths: &[usize]) -> Self {
        Self(
            graph
                .prunable_indices()
                .map(|i| (graph.layers[i].name.clone(), widths[i]))
                .collect(),
        )
    }

    /// Dense widths indexed by layer position. Non-prunable entries hold the
    /// original width and are ignored by propagation.
    pub(crate) fn to_dense(&self, graph: &ModelGraph) -> Result<Vec<usize>> {
        for name in self.0.keys() {
            match graph.layer(name) {
                Some(l) if l.kind.is_prunable() => {}
                Some(_) => {
                    return Err(Error::Domain(format!(
                        "config names `{name}`, which is not a prunable layer"
                    )))
                }
                None => return Err(Error::Domain(format!("config names unknown layer `{name}`"))),
            }
        }
        let mut dense = graph.widths();
        for i in graph.prunable_indices() {
            let name = &graph.layers[i].name;
            dense[i] = self
                .get(name)
                .ok_or_else(|| Error::Domain(format!("config does not cover layer `{name}`")))?;
        }
        Ok(dense)
    }
}

impl FromIterator<(String, usize)> for ChannelConfig {
    fn from_iter<T: IntoIterator<Item = (String, usize)>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Returns a new graph with output widths replaced per `config` and input
/// widths re-propagated. The input graph is untouched.
pub fn apply_channel_config(graph: &ModelGraph, config: &ChannelConfig) -> Result<ModelGraph> {
    let dense = config.to_dense(graph)?;
    let coupling = couple_channels(graph);
    check_dense(graph, &coupling, &dense)?;
    Ok(graph.with_widths(&dense))
}

pub(crate) fn check_dense(graph: &ModelGraph, coupling: &CouplingClasses, dense: &[usize]) -> Result<()> {
    for i in graph.prunable_indices() {
        let l = &graph.layers[i];
        if dense[i] == 0 || dense[i] > l.out_channels {
            return Err(Error::Bound {
                layer: l.name.clone(),
                value: dense[i],
                max: l.out_channels,
            });
        }
    }
    for class in coupling.classes() {
        let first = dense[class.members[0]];
        if class.members.iter().any(|&m| dense[m] != first) {
            let values: Vec<String> = class
                .members
                .iter()
                .map(|&m| format!("{}={}", graph.layers[m].name, dense[m]))
                .collect();
            return Err(Error::Constraint {
                class: class.layers.clone(),
                detail: format!("coupled widths differ ({})", values.join(", ")),
            });
        }
        if class.pinned && class.members.iter().any(|&m| dense[m] != graph.layers[m].out_channels) {
            return Err(Error::Constraint {
                class: class.layers.clone(),
                detail: "class width is fixed by the network input or the classifier".into(),
            });
        }
    }
    Ok(())
}

/// Round half away from zero, clamped to `[1, max]`.
pub(crate) fn round_channels(x: f64, max: usize) -> usize {
    let r = x.round();
    if r < 1.0 {
        1
    } else if r >= max as f64 {
        max
    } else {
        r as usize
    }
}

/// Uniform width multiplier: `c_i = round(u * C_i)`, at least 1. Layers in
/// pinned coupling classes keep their original width.
pub fn scale_uniform(graph: &ModelGraph, u: f64) -> Result<ChannelConfig> {
    let coupling = couple_channels(graph);
    let dense = scale_dense(graph, &coupling, u)?;
    Ok(ChannelConfig::from_dense(graph, &dense))
}

pub(crate) fn scale_dense(graph: &ModelGraph, coupling: &CouplingClasses, u: f64) -> Result<Vec<usize>> {
    if !(u > 0.0 && u <= 1.0) {
        return Err(Error::Domain(format!("uniform multiplier must lie in (0, 1], got {u}")));
    }
    let mut dense = graph.widths();
    for class in coupling.classes().iter().filter(|c| !c.pinned) {
        for &m in &class.members {
            dense[m] = round_channels(u * graph.layers[m].out_channels as f64, usize::MAX);
        }
    }
    Ok(dense)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = r#"{
        "input_shape": [3, 32, 32],
        "layers": [
            {"name": "data", "kind": "input"},
            {"name": "conv1", "kind": "conv", "out_channels": 16, "kernel": [3, 3], "predecessors": ["data"]},
            {"name": "gap", "kind": "global_pool", "predecessors": ["conv1"]},
            {"name": "fc", "kind": "linear", "out_channels": 10, "predecessors": ["gap"]}
        ]
    }"#;

    fn fig2(d4: usize) -> String {
        format!(
            r#"{{
            "input_shape": [8, 16, 16],
            "layers": [
                {{"name": "in", "kind": "input"}},
                {{"name": "layer1", "kind": "conv", "out_channels": 32, "kernel": [3, 3], "predecessors": ["in"]}},
                {{"name": "layer2", "kind": "conv", "out_channels": 24, "kernel": [3, 3], "predecessors": ["layer1"]}},
                {{"name": "layer3", "kind": "conv", "out_channels": {d4}, "kernel": [3, 3], "predecessors": ["layer2"]}},
                {{"name": "sum", "kind": "add", "predecessors": ["layer1", "layer3"]}}
            ]
        }}"#
        )
    }

    #[test]
    fn toy_net_has_two_prunable_layers() {
        let g = parse_model(TOY).unwrap();
        assert_eq!(g.num_prunable(), 2);
        assert_eq!(g.layer("fc").unwrap().in_channels, 16);
        assert_eq!(g.out_spatial(g.index_of("conv1").unwrap()), (32, 32));
        assert!(g.is_classifier(g.index_of("fc").unwrap()));
        assert!(!g.is_classifier(g.index_of("conv1").unwrap()));
    }

    #[test]
    fn residual_block_with_mismatched_add_is_rejected() {
        assert!(parse_model(&fig2(32)).is_ok());
        let err = parse_model(&fig2(48)).unwrap_err();
        assert!(matches!(err, Error::Graph(ref m) if m.contains("add `sum`")), "{err}");
    }

    #[test]
    fn empty_layer_list_is_a_parse_error() {
        let err = parse_model(r#"{"input_shape": [3, 8, 8], "layers": []}"#).unwrap_err();
        assert!(matches!(err, Error::Parse { ref field, .. } if field == "layers"));
    }

    #[test]
    fn schema_violations_name_the_field() {
        let err = parse_model(r#"{"layers": []}"#).unwrap_err();
        assert!(
            matches!(err, Error::Parse { ref field, .. } if field == "input_shape"),
            "{err}"
        );

        let missing_kernel = r#"{"input_shape": [3, 8, 8], "layers": [
            {"name": "x", "kind": "input"},
            {"name": "c", "kind": "conv", "out_channels": 4, "predecessors": ["x"]}]}"#;
        let err = parse_model(missing_kernel).unwrap_err();
        assert!(matches!(err, Error::Parse { ref field, .. } if field == "layers[1].kernel"));

        let bad_kind = r#"{"input_shape": [3, 8, 8], "layers": [
            {"name": "x", "kind": "input"},
            {"name": "c", "kind": "deconv", "predecessors": ["x"]}]}"#;
        let err = parse_model(bad_kind).unwrap_err();
        assert!(matches!(err, Error::Parse { ref field, .. } if field == "layers[1].kind"));
    }

    #[test]
    fn dangling_and_cyclic_predecessors() {
        let dangling = r#"{"input_shape": [3, 8, 8], "layers": [
            {"name": "x", "kind": "input"},
            {"name": "c", "kind": "conv", "out_channels": 4, "kernel": [1, 1], "predecessors": ["nope"]}]}"#;
        let err = parse_model(dangling).unwrap_err();
        assert!(matches!(err, Error::Graph(ref m) if m.contains("dangling")));

        let cyclic = r#"{"input_shape": [3, 8, 8], "layers": [
            {"name": "x", "kind": "input"},
            {"name": "a", "kind": "add", "predecessors": ["x", "b"]},
            {"name": "b", "kind": "conv", "out_channels": 3, "kernel": [1, 1], "predecessors": ["a"]}]}"#;
        let err = parse_model(cyclic).unwrap_err();
        assert!(matches!(err, Error::Graph(ref m) if m.contains("cycle")), "{err}");

        let misordered = r#"{"input_shape": [3, 8, 8], "layers": [
            {"name": "x", "kind": "input"},
            {"name": "b", "kind": "conv", "out_channels": 3, "kernel": [1, 1], "predecessors": ["a"]},
            {"name": "a", "kind": "conv", "out_channels": 3, "kernel": [1, 1], "predecessors": ["x"]}]}"#;
        let err = parse_model(misordered).unwrap_err();
        assert!(matches!(err, Error::Graph(ref m) if m.contains("topological")), "{err}");
    }

    #[test]
    fn depthwise_must_preserve_channels() {
        let doc = r#"{"input_shape": [3, 8, 8], "layers": [
            {"name": "x", "kind": "input"},
            {"name": "c", "kind": "conv", "out_channels": 8, "kernel": [1, 1], "predecessors": ["x"]},
            {"name": "dw", "kind": "depthwise_conv", "out_channels": 4, "kernel": [3, 3], "predecessors": ["c"]}]}"#;
        let err = parse_model(doc).unwrap_err();
        assert!(matches!(err, Error::Parse { ref field, .. } if field == "layers[2].out_channels"));
    }

    #[test]
    fn strided_reduction_to_nothing_is_rejected() {
        let doc = r#"{"input_shape": [3, 2, 2], "layers": [
            {"name": "x", "kind": "input"},
            {"name": "c", "kind": "conv", "out_channels": 8, "kernel": [3, 3], "stride": [4, 4], "predecessors": ["x"]}]}"#;
        assert!(matches!(parse_model(doc), Err(Error::Graph(_))));
    }

    #[test]
    fn identity_config_leaves_graph_unchanged() {
        let g = parse_model(TOY).unwrap();
        let same = apply_channel_config(&g, &ChannelConfig::identity(&g)).unwrap();
        assert_eq!(same, g);
    }

    #[test]
    fn half_width_config_halves_prunable_layers() {
        let g = parse_model(TOY).unwrap();
        let cfg = scale_uniform(&g, 0.5).unwrap();
        assert_eq!(cfg.get("conv1"), Some(8));
        // classifier width is the class count
        assert_eq!(cfg.get("fc"), Some(10));
        let pruned = apply_channel_config(&g, &cfg).unwrap();
        assert_eq!(pruned.layer("conv1").unwrap().out_channels, 8);
        assert_eq!(pruned.layer("fc").unwrap().in_channels, 8);
        assert_eq!(g.layer("conv1").unwrap().out_channels, 16);
    }

    #[test]
    fn scale_uniform_rounding_and_domain() {
        let g = parse_model(TOY).unwrap();
        assert_eq!(scale_uniform(&g, 1.0).unwrap(), ChannelConfig::identity(&g));
        assert_eq!(scale_uniform(&g, 0.05).unwrap().get("conv1"), Some(1));
        // 16 * 0.15625 = 2.5 rounds away from zero
        assert_eq!(scale_uniform(&g, 0.15625).unwrap().get("conv1"), Some(3));
        for bad in [0.0, -0.1, 1.01, f64::NAN] {
            assert!(matches!(scale_uniform(&g, bad), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn config_violating_residual_coupling_is_rejected() {
        let g = parse_model(&fig2(32)).unwrap();
        let mut cfg = ChannelConfig::identity(&g);
        cfg.insert("layer3", 16);
        match apply_channel_config(&g, &cfg).unwrap_err() {
            Error::Constraint { class, .. } => assert_eq!(class, vec!["layer1", "layer3"]),
            other => panic!("unexpected {other}"),
        }
        cfg.insert("layer1", 16);
        let pruned = apply_channel_config(&g, &cfg).unwrap();
        assert_eq!(pruned.layer("layer2").unwrap().in_channels, 16);
    }

    #[test]
    fn config_above_original_width_is_a_bound_error() {
        let g = parse_model(TOY).unwrap();
        let mut cfg = ChannelConfig::identity(&g);
        cfg.insert("conv1", 17);
        assert!(matches!(
            apply_channel_config(&g, &cfg),
            Err(Error::Bound { value: 17, max: 16, .. })
        ));
        cfg.insert("conv1", 0);
        assert!(matches!(apply_channel_config(&g, &cfg), Err(Error::Bound { .. })));
    }

    #[test]
    fn classifier_width_is_fixed() {
        let g = parse_model(TOY).unwrap();
        let mut cfg = ChannelConfig::identity(&g);
        cfg.insert("fc", 5);
        assert!(matches!(apply_channel_config(&g, &cfg), Err(Error::Constraint { .. })));
    }

    #[test]
    fn config_must_cover_exactly_the_prunable_layers() {
        let g = parse_model(TOY).unwrap();
        let mut cfg: ChannelConfig = [("conv1".to_string(), 8)].into_iter().collect();
        assert!(matches!(apply_channel_config(&g, &cfg), Err(Error::Domain(_))));
        cfg.insert("fc", 10);
        cfg.insert("gap", 1);
        assert!(matches!(apply_channel_config(&g, &cfg), Err(Error::Domain(_))));
    }

    #[test]
    fn document_round_trip() {
        let g = parse_model(&fig2(32)).unwrap();
        let again = parse_model(&g.to_json()).unwrap();
        assert_eq!(again, g);
    }
}
