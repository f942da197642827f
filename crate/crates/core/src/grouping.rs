//! Channel coupling and layer grouping.
//!
//! Residual additions force the layers feeding them to keep equal widths, and
//! a depthwise conv always matches the width of its producer. These
//! constraints are closed under union-find into coupling classes. Classes are
//! then bucketed by output spatial size into groups, the unit that importance
//! aggregation and resource assignment operate on.

use std::cmp::Reverse;
use std::collections::BTreeMap;

use serde::Serialize;

use crate::archgraph::{LayerKind, ModelGraph, Producer};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut node: usize) -> usize {
        let mut root = node;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[node] != node {
            let next = self.parent[node];
            self.parent[node] = root;
            node = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.rank[a] < self.rank[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        if self.rank[a] == self.rank[b] {
            self.rank[a] = self.rank[a].saturating_add(1);
        }
    }
}

/// A set of prunable layers whose output widths must stay equal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CouplingClass {
    pub layers: Vec<String>,
    /// Tied to the network input or the classifier; never rescaled.
    pub pinned: bool,
    #[serde(skip)]
    pub(crate) members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CouplingClasses {
    classes: Vec<CouplingClass>,
    #[serde(skip)]
    class_of: Vec<Option<usize>>,
}

impl CouplingClasses {
    pub fn classes(&self) -> &[CouplingClass] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Index of the class containing layer `idx`, if it is prunable.
    pub fn class_of(&self, idx: usize) -> Option<usize> {
        self.class_of.get(idx).copied().flatten()
    }
}

/// Unites the producers of every add and each depthwise conv with its
/// producer. The result is the finest partition satisfying all constraints.
pub fn couple_channels(graph: &ModelGraph) -> CouplingClasses {
    let n = graph.len();
    // slot n stands for the network input
    let slot = |p: Producer| match p {
        Producer::NetworkInput => n,
        Producer::Layer(i) => i,
    };
    let mut dsu = DisjointSet::new(n + 1);
    for (i, layer) in graph.layers().iter().enumerate() {
        match layer.kind {
            LayerKind::Add => {
                let producers = graph.producers(i);
                for p in &producers[1..] {
                    dsu.union(slot(producers[0]), slot(*p));
                }
            }
            LayerKind::DepthwiseConv => {
                let pred = graph.predecessor_indices(i)[0];
                for p in graph.producers(pred) {
                    dsu.union(i, slot(p));
                }
            }
            _ => {}
        }
    }

    let input_root = dsu.find(n);
    let mut by_root: BTreeMap<usize, usize> = BTreeMap::new();
    let mut classes: Vec<CouplingClass> = Vec::new();
    let mut class_of = vec![None; n];
    for i in graph.prunable_indices() {
        let root = dsu.find(i);
        let c = *by_root.entry(root).or_insert_with(|| {
            classes.push(CouplingClass {
                layers: Vec::new(),
                pinned: root == input_root,
                members: Vec::new(),
            });
            classes.len() - 1
        });
        classes[c].layers.push(graph.layers()[i].name.clone());
        classes[c].members.push(i);
        classes[c].pinned |= graph.is_classifier(i);
        class_of[i] = Some(c);
    }
    CouplingClasses { classes, class_of }
}

/// Layers sharing an output spatial size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Group {
    /// Spatial sizes folded into this group, largest first.
    pub spatial: Vec<(usize, usize)>,
    pub layers: Vec<String>,
    /// `g_i`: total output channels over the members.
    pub channels: usize,
    #[serde(skip)]
    pub(crate) members: Vec<usize>,
    #[serde(skip)]
    pub(crate) classes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupPartition {
    groups: Vec<Group>,
}

impl GroupPartition {
    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    /// `G`.
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group_of(&self, layer: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.layers.iter().any(|l| l == layer))
    }

    pub fn channel_totals(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.channels).collect()
    }
}

/// (area, (h, w))
type SizeKey = (usize, (usize, usize));

fn area(s: (usize, usize)) -> usize {
    s.0 * s.1
}

/// Buckets unpinned coupling classes by output spatial size, largest first,
/// then folds every single-layer group into its neighbour.
///
/// A class whose members sit at different sizes (a strided depthwise conv
/// coupled to the expansion conv before it) belongs to the smallest size, the
/// stage it feeds.
pub fn partition_groups(graph: &ModelGraph, coupling: &CouplingClasses) -> Result<GroupPartition> {
    // key orders largest area first; ties broken by (h, w) descending
    let mut buckets: BTreeMap<Reverse<SizeKey>, Vec<usize>> = BTreeMap::new();
    for (ci, class) in coupling.classes().iter().enumerate() {
        if class.pinned {
            continue;
        }
        let size = class
            .members
            .iter()
            .map(|&m| graph.out_spatial(m))
            .min_by_key(|&s| (area(s), s))
            .expect("classes are non-empty");
        buckets.entry(Reverse((area(size), size))).or_default().push(ci);
    }
    if buckets.is_empty() {
        return Err(Error::Partition("graph has no rescalable layers".into()));
    }

    let mut groups: Vec<Group> = buckets
        .into_iter()
        .map(|(Reverse((_, size)), classes)| build_group(graph, coupling, vec![size], classes))
        .collect();

    while groups.len() > 1 {
        let Some(i) = groups.iter().position(|g| g.members.len() == 1) else {
            break;
        };
        let single = groups.remove(i);
        let target = if i < groups.len() { i } else { i - 1 };
        let other = groups.remove(target);
        let (first, second) = if target >= i { (single, other) } else { (other, single) };
        let mut spatial = first.spatial;
        spatial.extend(second.spatial);
        let mut classes = first.classes;
        classes.extend(second.classes);
        groups.insert(target, build_group(graph, coupling, spatial, classes));
    }
    Ok(GroupPartition { groups })
}

fn build_group(
    graph: &ModelGraph,
    coupling: &CouplingClasses,
    spatial: Vec<(usize, usize)>,
    mut classes: Vec<usize>,
) -> Group {
    classes.sort_unstable();
    let mut members: Vec<usize> = classes
        .iter()
        .flat_map(|&c| coupling.classes()[c].members.iter().copied())
        .collect();
    members.sort_unstable();
    let layers = members.iter().map(|&m| graph.layers()[m].name.clone()).collect();
    let channels = members.iter().map(|&m| graph.layers()[m].out_channels).sum();
    Group {
        spatial,
        layers,
        channels,
        members,
        classes,
    }
}
