use crate::network::{NodeId, Path, StreetNetwork};

/// Position of a moving biker along a fixed node sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Route {
    nodes: Vec<NodeId>,
    lengths: Vec<f64>,
    leg: usize,
    offset: f64,
}

impl Route {
    pub fn new(net: &StreetNetwork, path: Path) -> Self {
        let lengths = path
            .nodes
            .windows(2)
            .map(|w| {
                net.neighbors(w[0])
                    .iter()
                    .find(|(n, _)| *n == w[1])
                    .map(|&(_, len)| len)
                    .expect("consecutive path nodes share an edge")
            })
            .collect();
        Self {
            nodes: path.nodes,
            lengths,
            leg: 0,
            offset: 0.0,
        }
    }

    pub fn stay(node: NodeId) -> Self {
        Self {
            nodes: vec![node],
            lengths: Vec::new(),
            leg: 0,
            offset: 0.0,
        }
    }

    pub fn finished(&self) -> bool {
        self.leg >= self.lengths.len()
    }

    /// Last node passed; the destination once `finished`.
    pub fn node(&self) -> NodeId {
        self.nodes[self.leg]
    }

    /// Distance already covered on the current edge.
    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn remaining(&self) -> f64 {
        self.lengths[self.leg..].iter().sum::<f64>() - self.offset
    }

    /// Moves up to `budget` meters forward; returns the distance actually covered.
    pub fn advance(&mut self, budget: f64) -> f64 {
        let mut left = budget;
        while left > 0.0 && !self.finished() {
            let rest = self.lengths[self.leg] - self.offset;
            if left >= rest {
                left -= rest;
                self.leg += 1;
                self.offset = 0.0;
            } else {
                self.offset += left;
                left = 0.0;
            }
        }
        budget - left
    }
}
