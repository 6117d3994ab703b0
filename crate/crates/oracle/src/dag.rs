//! A plain DAG with an explicit reachability matrix. Correctness over
//! speed: every row is a full boolean vector.

use std::cell::OnceCell;
use std::collections::HashMap;

use blockgraph::{AccountId, BankId, Blockgraph, Digest, InitNode, Node, NodeKind, TxKey};

#[derive(Debug, Clone)]
pub struct ONode {
    pub digest: Digest,
    pub bank: Option<BankId>,
    pub seq: u64,
    pub kind: NodeKind,
    pub parent: Option<usize>,
    pub refs: Vec<usize>,
    pub txs: Vec<TxKey>,
}

#[derive(Debug, Clone)]
pub struct Dag {
    pub nodes: Vec<ONode>,
    index: HashMap<Digest, usize>,
    /// `reach[a][b]`: node `a` acknowledges node `b`. Row `a` has `a + 1`
    /// entries since ancestors always come first.
    reach: Vec<Vec<bool>>,
    pub init: Vec<(AccountId, i128)>,
    /// Per Close: its block's transactions and whether each survives.
    pub(crate) verdicts: Vec<OnceCell<Vec<(TxKey, bool)>>>,
}

impl Dag {
    pub fn new(init: &InitNode) -> Self {
        let digest = Node::Init(init.clone()).digest();
        Dag {
            nodes: vec![ONode {
                digest,
                bank: None,
                seq: 0,
                kind: NodeKind::Init,
                parent: None,
                refs: Vec::new(),
                txs: Vec::new(),
            }],
            index: HashMap::from([(digest, 0)]),
            reach: vec![vec![true]],
            verdicts: vec![OnceCell::new()],
            init: init.entries().iter().map(|(a, m)| (*a, m.0 as i128)).collect(),
        }
    }

    /// Rebuilds a whole engine graph.
    pub fn of_graph(g: &Blockgraph) -> Result<Self, String> {
        let mut d = Dag::new(g.init());
        for n in g.nodes().skip(1) {
            d.add(n)?;
        }
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn find(&self, d: &Digest) -> Option<usize> {
        self.index.get(d).copied()
    }

    /// Adds a chain node whose parent and references are already present.
    pub fn add(&mut self, node: &Node) -> Result<usize, String> {
        let digest = node.digest();
        if let Some(&i) = self.index.get(&digest) {
            return Ok(i);
        }
        let Some(c) = node.chain() else {
            return Err("a second Init node".into());
        };
        let look = |d: &Digest| {
            self.index
                .get(d)
                .copied()
                .ok_or_else(|| format!("node {} arrives before its ancestor {}", digest.short(), d.short()))
        };
        let parent = look(&c.parent.hash())?;
        let refs = match &c.payload {
            blockgraph::Payload::Update(r) => r.iter().map(|r| look(&r.hash)).collect::<Result<Vec<_>, _>>()?,
            _ => Vec::new(),
        };
        let i = self.nodes.len();
        let mut row = vec![false; i + 1];
        row[i] = true;
        for &p in std::iter::once(&parent).chain(&refs) {
            for (j, &r) in self.reach[p].iter().enumerate() {
                if r {
                    row[j] = true;
                }
            }
        }
        self.reach.push(row);
        self.verdicts.push(OnceCell::new());
        self.nodes.push(ONode {
            digest,
            bank: Some(c.bank),
            seq: c.seq,
            kind: node.kind(),
            parent: Some(parent),
            refs,
            txs: node.transactions().iter().map(|t| t.key()).collect(),
        });
        self.index.insert(digest, i);
        Ok(i)
    }

    /// Reflexive reachability.
    pub fn acks(&self, a: usize, b: usize) -> bool {
        self.reach[a].get(b).copied().unwrap_or(false)
    }

    /// Strict ancestors of `a`, in index order.
    pub fn ancestors(&self, a: usize) -> impl Iterator<Item = usize> + '_ {
        (0..a).filter(move |&b| self.reach[a][b])
    }

    /// Walks the parent chain from `i` (inclusive) back to the nearest node
    /// of kind `want`, crossing only Updates.
    fn back_to(&self, i: usize, want: NodeKind) -> Option<usize> {
        let mut cur = Some(i);
        while let Some(k) = cur {
            let n = &self.nodes[k];
            if n.kind == want {
                return Some(k);
            }
            if n.kind != NodeKind::Update {
                return None;
            }
            cur = n.parent;
        }
        None
    }

    /// The Start of the block a Close or Accept belongs to.
    pub fn start_of(&self, i: usize) -> Option<usize> {
        match self.nodes[i].kind {
            NodeKind::Close => self.nodes[i].parent.and_then(|p| self.back_to(p, NodeKind::Start)),
            NodeKind::Accept => self.close_of(i).and_then(|c| self.start_of(c)),
            _ => None,
        }
    }

    /// The Close an Accept belongs to.
    pub fn close_of(&self, i: usize) -> Option<usize> {
        match self.nodes[i].kind {
            NodeKind::Accept => self.nodes[i].parent.and_then(|p| self.back_to(p, NodeKind::Close)),
            _ => None,
        }
    }
}

/// The full reachability matrix of an engine graph, indexed in the graph's
/// insertion order.
pub fn reachability_matrix(g: &Blockgraph) -> Result<Vec<Vec<bool>>, String> {
    let d = Dag::of_graph(g)?;
    let n = d.len();
    Ok((0..n).map(|a| (0..n).map(|b| d.acks(a, b)).collect()).collect())
}
