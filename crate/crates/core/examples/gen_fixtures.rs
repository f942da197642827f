//! Regenerates the model and stats fixtures under `fixtures/`.
//!
//! Run with: cargo run -p chanplan --example gen_fixtures

use std::path::Path;

use chanplan::archgraph::{LayerDoc, ModelDoc};
use chanplan::{parse_model, ModelGraph};
use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Builder {
    doc: ModelDoc,
}

impl Builder {
    fn new(input: [usize; 3]) -> Self {
        let mut b = Self {
            doc: ModelDoc {
                input_shape: input,
                layers: Vec::new(),
            },
        };
        b.push("data", "input", None, None, None, &[]);
        b
    }

    fn push(
        &mut self,
        name: &str,
        kind: &str,
        out: Option<usize>,
        kernel: Option<usize>,
        stride: Option<usize>,
        preds: &[&str],
    ) -> String {
        self.doc.layers.push(LayerDoc {
            name: name.to_string(),
            kind: kind.to_string(),
            out_channels: out,
            kernel: kernel.map(|k| [k, k]),
            stride: stride.map(|s| [s, s]),
            predecessors: preds.iter().map(|p| p.to_string()).collect(),
        });
        name.to_string()
    }

    fn conv(&mut self, name: &str, out: usize, k: usize, s: usize, pred: &str) -> String {
        self.push(name, "conv", Some(out), Some(k), Some(s), &[pred])
    }

    fn dw(&mut self, name: &str, k: usize, s: usize, pred: &str) -> String {
        self.push(name, "depthwise_conv", None, Some(k), Some(s), &[pred])
    }

    fn add(&mut self, name: &str, a: &str, b: &str) -> String {
        self.push(name, "add", None, None, None, &[a, b])
    }

    fn head(&mut self, pred: &str, classes: usize) {
        self.push("avgpool", "global_pool", None, None, None, &[pred]);
        self.push("fc", "linear", Some(classes), None, None, &["avgpool"]);
        self.push("logits", "output", None, None, None, &["fc"]);
    }
}

fn resnet(bottleneck: bool, depths: [usize; 4]) -> ModelDoc {
    let mut b = Builder::new([3, 224, 224]);
    let mut x = b.conv("conv1", 64, 7, 2, "data");
    x = b.push("maxpool", "pool", None, Some(3), Some(2), &[&x]);
    let mut in_ch = 64;
    for (stage, (&depth, width)) in depths.iter().zip([64, 128, 256, 512]).enumerate() {
        for block in 0..depth {
            let p = format!("layer{}.{}", stage + 1, block);
            let stride = if block == 0 && stage > 0 { 2 } else { 1 };
            let out_ch = if bottleneck { width * 4 } else { width };
            let y = if bottleneck {
                let y = b.conv(&format!("{p}.conv1"), width, 1, 1, &x);
                let y = b.conv(&format!("{p}.conv2"), width, 3, stride, &y);
                b.conv(&format!("{p}.conv3"), out_ch, 1, 1, &y)
            } else {
                let y = b.conv(&format!("{p}.conv1"), width, 3, stride, &x);
                b.conv(&format!("{p}.conv2"), width, 3, 1, &y)
            };
            let shortcut = if stride != 1 || in_ch != out_ch {
                b.conv(&format!("{p}.downsample"), out_ch, 1, stride, &x)
            } else {
                x.clone()
            };
            x = b.add(&format!("{p}.add"), &y, &shortcut);
            in_ch = out_ch;
        }
    }
    b.head(&x, 1000);
    b.doc
}

fn mobilenet_v2() -> ModelDoc {
    let mut b = Builder::new([3, 224, 224]);
    let mut x = b.conv("features.0", 32, 3, 2, "data");
    let mut in_ch = 32;
    let mut idx = 1;
    // (expansion t, channels c, repeats n, first stride s)
    for (t, c, n, s) in [
        (1, 16, 1, 1),
        (6, 24, 2, 2),
        (6, 32, 3, 2),
        (6, 64, 4, 2),
        (6, 96, 3, 1),
        (6, 160, 3, 2),
        (6, 320, 1, 1),
    ] {
        for i in 0..n {
            let p = format!("features.{idx}");
            let stride = if i == 0 { s } else { 1 };
            let mut y = x.clone();
            if t != 1 {
                y = b.conv(&format!("{p}.expand"), in_ch * t, 1, 1, &y);
            }
            y = b.dw(&format!("{p}.dw"), 3, stride, &y);
            y = b.conv(&format!("{p}.project"), c, 1, 1, &y);
            x = if stride == 1 && in_ch == c {
                b.add(&format!("{p}.add"), &y, &x)
            } else {
                y
            };
            in_ch = c;
            idx += 1;
        }
    }
    x = b.conv("features.18", 1280, 1, 1, &x);
    b.head(&x, 1000);
    b.doc
}

fn toy() -> ModelDoc {
    let mut b = Builder::new([3, 32, 32]);
    let x = b.conv("stem", 16, 3, 1, "data");
    let y = b.conv("block.conv1", 16, 3, 1, &x);
    let y = b.conv("block.conv2", 16, 3, 1, &y);
    let x = b.add("block.add", &y, &x);
    let x = b.conv("down", 32, 3, 2, &x);
    let x = b.conv("tail", 32, 3, 1, &x);
    b.head(&x, 10);
    b.doc
}

/// Synthetic |gamma| values: each spatial stage gets its own scale so group
/// importances differ.
fn stats(graph: &ModelGraph, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stage_scale: IndexMap<(usize, usize), f64> = IndexMap::new();
    let mut scores: IndexMap<String, Vec<f64>> = IndexMap::new();
    for i in graph.prunable_indices() {
        if graph.is_classifier(i) {
            continue;
        }
        let layer = &graph.layers()[i];
        let scale = *stage_scale
            .entry(graph.out_spatial(i))
            .or_insert_with(|| rng.random_range(0.2..1.2));
        let values = (0..layer.out_channels)
            .map(|_| {
                let v: f64 = scale * rng.random::<f64>().powi(2);
                (v * 1e6).round() / 1e6
            })
            .collect();
        scores.insert(layer.name.clone(), values);
    }
    let doc = serde_json::json!({"criterion": "bn_gamma", "scores": scores});
    serde_json::to_string(&doc).unwrap() + "\n"
}

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    std::fs::create_dir_all(&dir).unwrap();
    let models = [
        ("resnet18", resnet(false, [2, 2, 2, 2]), 18),
        ("resnet50", resnet(true, [3, 4, 6, 3]), 50),
        ("mobilenetv2", mobilenet_v2(), 2),
        ("toy", toy(), 7),
    ];
    for (name, doc, seed) in models {
        let text = serde_json::to_string_pretty(&doc).unwrap() + "\n";
        let graph = parse_model(&text).expect("fixture is valid");
        std::fs::write(dir.join(format!("{name}.json")), &text).unwrap();
        std::fs::write(dir.join(format!("{name}_stats.json")), stats(&graph, seed)).unwrap();
        let cost = chanplan::total_cost(&graph);
        println!(
            "{name}: {} layers, {} flops, {} params",
            graph.len(),
            cost.flops,
            cost.params
        );
    }
}
