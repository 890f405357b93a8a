use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use super::ModelConfig;
use crate::types::{Task, NUM_LEVELS};

/// A named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub name: String,
    pub range: Range<usize>,
    /// Scale of the uniform initialization; zero means constant `fill`.
    pub(crate) init_scale: f64,
    pub(crate) fill: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Norm {
    pub gamma: Range<usize>,
    pub beta: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Linear {
    pub w: Range<usize>,
    pub b: Range<usize>,
    pub fan_in: usize,
    pub fan_out: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Block {
    pub ln1: Norm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: Norm,
    pub fc1: Linear,
    pub fc2: Linear,
}

/// Offsets of every tensor of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub(crate) groups: Vec<Group>,
    pub(crate) embed: Linear,
    pub(crate) pos: Range<usize>,
    pub(crate) trunk: Vec<Block>,
    pub(crate) branches: [Vec<Block>; 3],
    pub(crate) norms: [Norm; 3],
    pub(crate) attr1: Linear,
    pub(crate) attr2: Linear,
    pub(crate) heads: [Linear; 3],
    len: usize,
}

struct Builder {
    groups: Vec<Group>,
    len: usize,
}

impl Builder {
    fn tensor(&mut self, name: String, n: usize, init_scale: f64, fill: f64) -> Range<usize> {
        let r = self.len..self.len + n;
        self.len += n;
        self.groups.push(Group { name, range: r.clone(), init_scale, fill });
        r
    }

    fn norm(&mut self, name: &str, dim: usize) -> Norm {
        Norm {
            gamma: self.tensor(format!("{name}.gamma"), dim, 0.0, 1.0),
            beta: self.tensor(format!("{name}.beta"), dim, 0.0, 0.0),
        }
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let scale = libm::sqrt(3.0 / fan_in as f64);
        Linear {
            w: self.tensor(format!("{name}.weight"), fan_in * fan_out, scale, 0.0),
            b: self.tensor(format!("{name}.bias"), fan_out, 0.0, 0.0),
            fan_in,
            fan_out,
        }
    }

    fn block(&mut self, name: &str, c: usize) -> Block {
        Block {
            ln1: self.norm(&format!("{name}.norm1"), c),
            q: self.linear(&format!("{name}.attn.q"), c, c),
            k: self.linear(&format!("{name}.attn.k"), c, c),
            v: self.linear(&format!("{name}.attn.v"), c, c),
            o: self.linear(&format!("{name}.attn.proj"), c, c),
            ln2: self.norm(&format!("{name}.norm2"), c),
            fc1: self.linear(&format!("{name}.ffn.fc1"), c, 2 * c),
            fc2: self.linear(&format!("{name}.ffn.fc2"), 2 * c, c),
        }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let c = cfg.embed_dim;
        let mut b = Builder { groups: Vec::new(), len: 0 };
        let embed = b.linear("patch_embed", cfg.patch_dim(), c);
        let pos = b.tensor("pos_embed".into(), cfg.tokens() * c, 0.02 * libm::sqrt(3.0), 0.0);
        let trunk = (0..cfg.trunk_depth).map(|i| b.block(&format!("trunk.{i}"), c)).collect();
        let branches = Task::ALL.map(|t| {
            (0..cfg.branch_depth)
                .map(|i| b.block(&format!("branch.{}.{i}", t.as_str()), c))
                .collect()
        });
        let norms = Task::ALL.map(|t| b.norm(&format!("branch.{}.norm", t.as_str()), c));
        let attr1 = b.linear("attr.fc1", 3, cfg.attr_dim);
        let attr2 = b.linear("attr.fc2", cfg.attr_dim, cfg.attr_dim);
        let heads = Task::ALL.map(|t| b.linear(&format!("head.{}", t.as_str()), c + cfg.attr_dim, NUM_LEVELS));
        Layout {
            len: b.len,
            groups: b.groups,
            embed,
            pos,
            trunk,
            branches,
            norms,
            attr1,
            attr2,
            heads,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn group(&self, name: &str) -> Option<&Group> {
        self.groups.iter().find(|g| g.name == name)
    }

    /// Ranges of everything specific to `task`: branch blocks, the final
    /// norm and the head, in a fixed order.
    pub fn task_ranges(&self, task: Task) -> Vec<Range<usize>> {
        let prefix = format!("branch.{}.", task.as_str());
        let head = format!("head.{}.", task.as_str());
        self.groups
            .iter()
            .filter(|g| g.name.starts_with(&prefix) || g.name.starts_with(&head))
            .map(|g| g.range.clone())
            .collect()
    }
}
