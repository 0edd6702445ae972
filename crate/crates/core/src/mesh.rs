//! Controlled-vocabulary hierarchy read from `child TAB parent` lines.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct MeshTree {
    parents: BTreeMap<String, BTreeSet<String>>,
}

impl MeshTree {
    pub fn from_edges<'a>(edges: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut parents: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (child, parent) in edges {
            parents
                .entry(child.to_string())
                .or_default()
                .insert(parent.to_string());
        }
        let tree = MeshTree { parents };
        tree.check_acyclic()?;
        Ok(tree)
    }

    pub fn parse(input: impl BufRead, context: &str) -> Result<Self> {
        let mut edges = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::io(context, e))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (c, p) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(context, i + 1, "expected child<TAB>parent"))?;
            edges.push((c.trim().to_string(), p.trim().to_string()));
        }
        Self::from_edges(edges.iter().map(|(c, p)| (c.as_str(), p.as_str())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(std::io::BufReader::new(f), &path.display().to_string())
    }

    fn check_acyclic(&self) -> Result<()> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Active,
            Done,
        }
        let mut marks: BTreeMap<&str, Mark> = BTreeMap::new();
        for start in self.parents.keys() {
            if marks.contains_key(start.as_str()) {
                continue;
            }
            // Iterative depth-first search; the stack holds (node, next parent index).
            let mut stack: Vec<(&str, usize)> = vec![(start, 0)];
            marks.insert(start, Mark::Active);
            while let Some(&mut (node, ref mut next)) = stack.last_mut() {
                let ps: Vec<&String> = self.parents.get(node).into_iter().flatten().collect();
                if *next < ps.len() {
                    let p = ps[*next].as_str();
                    *next += 1;
                    match marks.get(p) {
                        Some(Mark::Active) => {
                            return Err(Error::Data(format!("hierarchy has a cycle through {p}")))
                        }
                        Some(Mark::Done) => {}
                        None => {
                            marks.insert(p, Mark::Active);
                            stack.push((p, 0));
                        }
                    }
                } else {
                    marks.insert(node, Mark::Done);
                    stack.pop();
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.parents.contains_key(id) || self.parents.values().any(|ps| ps.contains(id))
    }

    /// Every strict ancestor of `id`.
    pub fn ancestors(&self, id: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut todo: Vec<&str> = vec![id];
        while let Some(n) = todo.pop() {
            for p in self.parents.get(n).into_iter().flatten() {
                if out.insert(p.clone()) {
                    todo.push(p);
                }
            }
        }
        out
    }

    pub fn is_strict_ancestor(&self, ancestor: &str, of: &str) -> bool {
        ancestor != of && self.ancestors(of).contains(ancestor)
    }
}
