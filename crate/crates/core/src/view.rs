use crate::bitset::BitSet;
use crate::crypto::Digest;
use crate::error::GraphError;
use crate::graph::Blockgraph;

/// An ancestry-closed slice of a graph: the whole graph, a subgraph or a
/// representing graph. Every ledger computation runs over a view so that
/// subgraphs never have to be materialized.
#[derive(Debug, Clone)]
pub struct View<'a> {
    pub(crate) g: &'a Blockgraph,
    members: Option<BitSet>,
}

impl<'a> View<'a> {
    pub fn full(g: &'a Blockgraph) -> Self {
        View { g, members: None }
    }

    /// Nodes `d` acknowledges, without `d` itself.
    pub fn subgraph(g: &'a Blockgraph, d: &Digest) -> Result<Self, GraphError> {
        let i = g.idx(d)?;
        Ok(Self::strict(g, i))
    }

    /// Nodes `d` acknowledges, including `d`.
    pub fn representing(g: &'a Blockgraph, d: &Digest) -> Result<Self, GraphError> {
        let i = g.idx(d)?;
        Ok(Self::rep(g, i))
    }

    pub(crate) fn strict(g: &'a Blockgraph, i: u32) -> Self {
        let mut m = g.entry(i).ancestors.clone();
        m.insert(0);
        Self::from_bits(g, m)
    }

    pub(crate) fn rep(g: &'a Blockgraph, i: u32) -> Self {
        let mut v = Self::strict(g, i);
        if let Some(m) = &mut v.members {
            m.insert(i);
        }
        v
    }

    /// `bits` must be ancestry-closed and contain the Init node.
    pub(crate) fn from_bits(g: &'a Blockgraph, bits: BitSet) -> Self {
        View {
            g,
            members: Some(bits),
        }
    }

    pub fn graph(&self) -> &'a Blockgraph {
        self.g
    }

    pub(crate) fn contains(&self, i: u32) -> bool {
        match &self.members {
            None => (i as usize) < self.g.len(),
            Some(m) => m.contains(i),
        }
    }

    pub fn contains_digest(&self, d: &Digest) -> bool {
        self.g.idx(d).is_ok_and(|i| self.contains(i))
    }

    pub(crate) fn bits(&self) -> Option<&BitSet> {
        self.members.as_ref()
    }

    pub fn len(&self) -> usize {
        match &self.members {
            None => self.g.len(),
            Some(m) => m.count(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Filters one of the graph's kind lists down to this view.
    pub(crate) fn select(&self, list: &[u32]) -> Vec<u32> {
        list.iter().copied().filter(|&i| self.contains(i)).collect()
    }
}

impl<'a> From<&'a Blockgraph> for View<'a> {
    fn from(g: &'a Blockgraph) -> Self {
        View::full(g)
    }
}

impl Blockgraph {
    pub fn view(&self) -> View<'_> {
        View::full(self)
    }
}
