//! FLOPs and parameter counting.
//!
//! One multiply-accumulate counts as one FLOP. Biases, batch-norm and
//! activations are not counted; add, pooling and input layers cost nothing.

use std::iter::Sum;
use std::ops::Add;

use serde::Serialize;

use crate::archgraph::{ChannelConfig, LayerKind, LayerSpec, ModelGraph};
use crate::error::Result;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ResourceCount {
    pub flops: u64,
    pub params: u64,
}

impl Add for ResourceCount {
    type Output = ResourceCount;

    fn add(self, rhs: Self) -> Self {
        ResourceCount {
            flops: self.flops + rhs.flops,
            params: self.params + rhs.params,
        }
    }
}

impl Sum for ResourceCount {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ResourceCount::default(), Add::add)
    }
}

fn kind_cost(
    kind: LayerKind,
    kernel: (usize, usize),
    in_ch: usize,
    out_ch: usize,
    out_spatial: (usize, usize),
) -> ResourceCount {
    let k = (kernel.0 * kernel.1) as u64;
    let hw = (out_spatial.0 * out_spatial.1) as u64;
    let (i, o) = (in_ch as u64, out_ch as u64);
    match kind {
        LayerKind::Conv => ResourceCount {
            flops: k * i * o * hw,
            params: k * i * o,
        },
        LayerKind::DepthwiseConv => ResourceCount {
            flops: k * o * hw,
            params: k * o,
        },
        LayerKind::Linear => ResourceCount {
            flops: i * o,
            params: i * o,
        },
        _ => ResourceCount::default(),
    }
}

/// Cost of one layer producing a feature map of size `out_spatial`.
pub fn layer_cost(layer: &LayerSpec, out_spatial: (usize, usize)) -> ResourceCount {
    kind_cost(
        layer.kind,
        layer.kernel,
        layer.in_channels,
        layer.out_channels,
        out_spatial,
    )
}

/// The resource estimate `e(c_1, ..., c_N)` of a whole graph.
pub fn total_cost(graph: &ModelGraph) -> ResourceCount {
    graph
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| layer_cost(l, graph.out_spatial(i)))
        .sum()
}

/// Cost of `graph` pruned to `config`, without materializing the new graph.
pub fn config_cost(graph: &ModelGraph, config: &ChannelConfig) -> Result<ResourceCount> {
    let dense = config.to_dense(graph)?;
    Ok(dense_cost(graph, &dense))
}

pub(crate) fn dense_cost(graph: &ModelGraph, widths: &[usize]) -> ResourceCount {
    graph
        .propagate(widths)
        .into_iter()
        .zip(graph.layers())
        .enumerate()
        .map(|(i, ((inc, outc), l))| kind_cost(l.kind, l.kernel, inc, outc, graph.out_spatial(i)))
        .sum()
}

pub(crate) fn dense_flops(graph: &ModelGraph, widths: &[usize]) -> u64 {
    dense_cost(graph, widths).flops
}

/// `1818558976` -> `"1.82G"`, `300774272` -> `"300.77M"`.
pub fn human(n: u64) -> String {
    let x = n as f64;
    if n >= 1_000_000_000 {
        format!("{:.2}G", x / 1e9)
    } else if n >= 1_000_000 {
        format!("{:.2}M", x / 1e6)
    } else if n >= 1_000 {
        format!("{:.2}K", x / 1e3)
    } else {
        n.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archgraph::parse_model;

    fn spec(kind: LayerKind, kernel: (usize, usize), i: usize, o: usize) -> LayerSpec {
        LayerSpec {
            name: "l".into(),
            kind,
            in_channels: i,
            out_channels: o,
            kernel,
            stride: (1, 1),
            predecessors: vec![],
        }
    }

    #[test]
    fn conv_flops() {
        let c = layer_cost(&spec(LayerKind::Conv, (3, 3), 3, 16), (32, 32));
        assert_eq!(c.flops, 442_368);
        assert_eq!(c.params, 432);
    }

    #[test]
    fn linear_and_free_layers() {
        let c = layer_cost(&spec(LayerKind::Linear, (1, 1), 512, 1000), (1, 1));
        assert_eq!(c.flops, 512_000);
        for kind in [LayerKind::Add, LayerKind::Pool, LayerKind::Input, LayerKind::GlobalPool] {
            assert_eq!(
                layer_cost(&spec(kind, (1, 1), 64, 64), (56, 56)),
                ResourceCount::default()
            );
        }
    }

    #[test]
    fn depthwise_is_per_channel() {
        let c = layer_cost(&spec(LayerKind::DepthwiseConv, (3, 3), 32, 32), (112, 112));
        assert_eq!(c.flops, 9 * 32 * 112 * 112);
        assert_eq!(c.params, 9 * 32);
    }

    #[test]
    fn dense_cost_matches_materialized_graph() {
        let g = parse_model(
            r#"{"input_shape": [3, 16, 16], "layers": [
                {"name": "x", "kind": "input"},
                {"name": "a", "kind": "conv", "out_channels": 8, "kernel": [3, 3], "predecessors": ["x"]},
                {"name": "dw", "kind": "depthwise_conv", "kernel": [3, 3], "stride": [2, 2], "predecessors": ["a"]},
                {"name": "b", "kind": "conv", "out_channels": 12, "kernel": [1, 1], "predecessors": ["dw"]},
                {"name": "gap", "kind": "global_pool", "predecessors": ["b"]},
                {"name": "fc", "kind": "linear", "out_channels": 10, "predecessors": ["gap"]}]}"#,
        )
        .unwrap();
        let mut w = g.widths();
        assert_eq!(dense_cost(&g, &w), total_cost(&g));
        w[1] = 5;
        w[2] = 5;
        w[3] = 7;
        assert_eq!(dense_cost(&g, &w), total_cost(&g.with_widths(&w)));
        assert_eq!(dense_flops(&g, &w), 9 * 3 * 5 * 256 + 9 * 5 * 64 + 5 * 7 * 64 + 7 * 10);
    }

    #[test]
    fn human_units() {
        assert_eq!(human(1_818_558_976), "1.82G");
        assert_eq!(human(300_774_272), "300.77M");
        assert_eq!(human(512), "512");
    }
}
