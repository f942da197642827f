//! Test-only oracles. Nothing here calls into the planner's cost, coupling or
//! expansion code paths; graphs are read only through their public layer list.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;

use chanplan::archgraph::{LayerDoc, ModelDoc};
use chanplan::{LayerKind, ModelGraph};
use rand::Rng;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn fixture(name: &str) -> String {
    std::fs::read_to_string(fixture_path(name)).unwrap()
}

pub fn model(name: &str) -> ModelGraph {
    chanplan::parse_model(&fixture(&format!("{name}.json"))).unwrap()
}

/// Output spatial size of every layer, recomputed from kernels and strides.
pub fn brute_spatial(graph: &ModelGraph) -> HashMap<String, (usize, usize)> {
    let (_, h, w) = graph.input_shape();
    let mut out: HashMap<String, (usize, usize)> = HashMap::new();
    for l in graph.layers() {
        let pin = l.predecessors.first().map(|p| out[p]);
        let s = match l.kind {
            LayerKind::Input => (h, w),
            LayerKind::Conv | LayerKind::DepthwiseConv | LayerKind::Pool => {
                let (ph, pw) = pin.unwrap();
                (ph / l.stride.0, pw / l.stride.1)
            }
            LayerKind::Linear | LayerKind::GlobalPool => (1, 1),
            _ => pin.unwrap(),
        };
        out.insert(l.name.clone(), s);
    }
    out
}

/// FLOPs of `graph` with conv/linear widths taken from `widths` (by name,
/// falling back to the original width), counted layer by layer.
pub fn brute_flops(graph: &ModelGraph, widths: &BTreeMap<String, usize>) -> u64 {
    let spatial = brute_spatial(graph);
    let mut ch: HashMap<&str, usize> = HashMap::new();
    let mut total = 0u64;
    for l in graph.layers() {
        let inc = match l.kind {
            LayerKind::Input => graph.input_shape().0,
            _ => ch[l.predecessors[0].as_str()],
        };
        let outc = match l.kind {
            LayerKind::Conv | LayerKind::Linear => widths.get(&l.name).copied().unwrap_or(l.out_channels),
            _ => inc,
        };
        ch.insert(&l.name, outc);
        let (h, w) = spatial[&l.name];
        let k = (l.kernel.0 * l.kernel.1) as u64;
        total += match l.kind {
            LayerKind::Conv => k * inc as u64 * outc as u64 * (h * w) as u64,
            LayerKind::DepthwiseConv => k * outc as u64 * (h * w) as u64,
            LayerKind::Linear => inc as u64 * outc as u64,
            _ => 0,
        };
    }
    total
}

/// Prunable layers (or "<input>") whose widths reach layer `name`'s output.
fn sources(graph: &ModelGraph, name: &str) -> Vec<String> {
    let l = graph.layer(name).unwrap();
    match l.kind {
        LayerKind::Input => vec!["<input>".into()],
        k if k.is_prunable() => vec![name.to_string()],
        _ => l.predecessors.iter().flat_map(|p| sources(graph, p)).collect(),
    }
}

/// Equality constraints between layer widths implied by adds and depthwise convs.
pub fn constraint_pairs(graph: &ModelGraph) -> Vec<(String, String)> {
    let mut pairs = Vec::new();
    for l in graph.layers() {
        match l.kind {
            LayerKind::Add => {
                let s = sources(graph, &l.name);
                for a in &s {
                    for b in &s {
                        if a < b {
                            pairs.push((a.clone(), b.clone()));
                        }
                    }
                }
            }
            LayerKind::DepthwiseConv => {
                for s in sources(graph, &l.predecessors[0]) {
                    pairs.push((l.name.clone(), s));
                }
            }
            _ => {}
        }
    }
    pairs
}

/// Finest partition of prunable layers closed under the constraint pairs,
/// by boolean transitive closure. "<input>" is dropped from the result.
pub fn closure_classes(graph: &ModelGraph) -> Vec<BTreeSet<String>> {
    let mut nodes: Vec<String> = graph
        .layers()
        .iter()
        .filter(|l| l.kind.is_prunable())
        .map(|l| l.name.clone())
        .collect();
    nodes.push("<input>".into());
    let n = nodes.len();
    let pos: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut reach = vec![vec![false; n]; n];
    for (i, row) in reach.iter_mut().enumerate() {
        row[i] = true;
    }
    for (a, b) in constraint_pairs(graph) {
        let (i, j) = (pos[a.as_str()], pos[b.as_str()]);
        reach[i][j] = true;
        reach[j][i] = true;
    }
    for k in 0..n {
        let via = reach[k].clone();
        for row in reach.iter_mut() {
            if row[k] {
                for (r, &v) in row.iter_mut().zip(&via) {
                    *r |= v;
                }
            }
        }
    }
    let mut seen = vec![false; n];
    let mut classes = Vec::new();
    for i in 0..n - 1 {
        if seen[i] {
            continue;
        }
        let class: BTreeSet<String> = (0..n - 1)
            .filter(|&j| reach[i][j])
            .map(|j| {
                seen[j] = true;
                nodes[j].clone()
            })
            .collect();
        classes.push(class);
    }
    classes
}

/// Whether a width assignment satisfies every constraint pair.
pub fn satisfies(pairs: &[(String, String)], class_of: &BTreeMap<String, usize>) -> bool {
    pairs
        .iter()
        .all(|(a, b)| a == "<input>" || b == "<input>" || class_of[a] == class_of[b])
}

/// Exhaustive optimum of one group's linear expansion: every tuple of class
/// widths in `[base, cap]` reachable by a single multiplier `s >= 1` under
/// round-half-away rounding, keeping the one with the most FLOPs whose
/// increase stays within `share`.
pub fn oracle_expand_group(
    graph: &ModelGraph,
    widths: &mut BTreeMap<String, usize>,
    classes: &[Vec<String>],
    share: u64,
) {
    let start = brute_flops(graph, widths);
    let bounds: Vec<(usize, usize)> = classes
        .iter()
        .map(|c| (widths[&c[0]], graph.layer(&c[0]).unwrap().out_channels))
        .collect();

    let mut best: Option<(u64, Vec<usize>)> = None;
    let mut choice = Vec::with_capacity(bounds.len());
    #[allow(clippy::too_many_arguments)]
    fn dfs(
        graph: &ModelGraph,
        widths: &BTreeMap<String, usize>,
        classes: &[Vec<String>],
        bounds: &[(usize, usize)],
        lo: f64,
        hi: f64,
        choice: &mut Vec<usize>,
        limit: u64,
        best: &mut Option<(u64, Vec<usize>)>,
    ) {
        let k = choice.len();
        if k == bounds.len() {
            let mut w = widths.clone();
            for (c, &v) in classes.iter().zip(choice.iter()) {
                for name in c {
                    w.insert(name.clone(), v);
                }
            }
            let f = brute_flops(graph, &w);
            if f <= limit && best.as_ref().is_none_or(|(bf, _)| f > *bf) {
                *best = Some((f, choice.clone()));
            }
            return;
        }
        let (b, cap) = bounds[k];
        for c in b..=cap {
            let bf = b as f64;
            let l = ((c as f64 - 0.5) / bf).max(lo);
            let h = if c == cap { hi } else { ((c as f64 + 0.5) / bf).min(hi) };
            if l < h {
                choice.push(c);
                dfs(graph, widths, classes, bounds, l, h, choice, limit, best);
                choice.pop();
            }
        }
    }
    dfs(
        graph,
        widths,
        classes,
        &bounds,
        1.0,
        f64::INFINITY,
        &mut choice,
        start + share,
        &mut best,
    );
    let (_, chosen) = best.expect("s = 1 is always feasible");
    for (c, v) in classes.iter().zip(chosen) {
        for name in c {
            widths.insert(name.clone(), v);
        }
    }
}

/// Largest FLOPs drop from removing one channel of any coupling class.
pub fn one_channel_step(graph: &ModelGraph, widths: &BTreeMap<String, usize>, classes: &[BTreeSet<String>]) -> u64 {
    let base = brute_flops(graph, widths);
    classes
        .iter()
        .filter(|c| c.iter().all(|n| widths.contains_key(n)))
        .map(|c| {
            let mut w = widths.clone();
            for n in c {
                let v = w[n];
                w.insert(n.clone(), v.saturating_sub(1).max(1));
            }
            base - brute_flops(graph, &w)
        })
        .max()
        .unwrap_or(0)
}

fn layer(name: &str, kind: &str, out: Option<usize>, k: Option<usize>, s: usize, preds: &[&str]) -> LayerDoc {
    LayerDoc {
        name: name.into(),
        kind: kind.into(),
        out_channels: out,
        kernel: k.map(|k| [k, k]),
        stride: k.map(|_| [s, s]),
        predecessors: preds.iter().map(|p| p.to_string()).collect(),
    }
}

/// Random small CNN: at most six prunable layers besides the classifier,
/// widths up to 32, optionally a residual block, strided convs and a
/// depthwise conv.
pub fn random_toy(rng: &mut impl Rng) -> ModelDoc {
    let side = [8usize, 16][rng.random_range(0..2)];
    let mut layers = vec![layer("x", "input", None, None, 1, &[])];
    let mut prev = "x".to_string();
    let mut spatial = side;
    let mut budget = rng.random_range(2..=6usize);
    let mut residual_left = rng.random_bool(0.6);
    let mut n = 0;
    while budget > 0 {
        n += 1;
        if residual_left && budget >= 3 {
            residual_left = false;
            budget -= 3;
            let w = rng.random_range(1..=32);
            let mid = rng.random_range(1..=32);
            let a = format!("r{n}a");
            let b = format!("r{n}b");
            let c = format!("r{n}c");
            let add = format!("r{n}add");
            layers.push(layer(&a, "conv", Some(w), Some(3), 1, &[&prev]));
            layers.push(layer(&b, "conv", Some(mid), Some(3), 1, &[&a]));
            layers.push(layer(&c, "conv", Some(w), Some(1), 1, &[&b]));
            layers.push(layer(&add, "add", None, None, 1, &[&a, &c]));
            prev = add;
        } else if n > 1 && rng.random_bool(0.2) {
            budget -= 1;
            let s = if spatial >= 4 && rng.random_bool(0.5) { 2 } else { 1 };
            spatial /= s;
            let name = format!("dw{n}");
            layers.push(layer(&name, "depthwise_conv", None, Some(3), s, &[&prev]));
            prev = name;
        } else {
            budget -= 1;
            let s = if spatial >= 4 && rng.random_bool(0.4) { 2 } else { 1 };
            spatial /= s;
            let name = format!("c{n}");
            let k = [1, 3][rng.random_range(0..2)];
            layers.push(layer(
                &name,
                "conv",
                Some(rng.random_range(1..=32)),
                Some(k),
                s,
                &[&prev],
            ));
            prev = name;
        }
    }
    layers.push(layer("gap", "global_pool", None, None, 1, &[&prev]));
    layers.push(layer("fc", "linear", Some(10), None, 1, &["gap"]));
    layers.push(layer("out", "output", None, None, 1, &["fc"]));
    ModelDoc {
        input_shape: [3, side, side],
        layers,
    }
}

/// Config widths as a name-keyed map.
pub fn widths_of(config: &chanplan::ChannelConfig) -> BTreeMap<String, usize> {
    config.iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Random stats document for `graph` with every score drawn uniformly.
pub fn random_stats(graph: &ModelGraph, rng: &mut impl Rng) -> chanplan::ImportanceReport {
    let scores = graph
        .layers()
        .iter()
        .enumerate()
        .filter(|(i, l)| l.kind.is_prunable() && !graph.is_classifier(*i))
        .map(|(_, l)| {
            (
                l.name.clone(),
                (0..l.out_channels).map(|_| rng.random::<f64>()).collect(),
            )
        })
        .collect();
    chanplan::ImportanceReport::new(chanplan::Criterion::BnGamma, scores, graph).unwrap()
}
