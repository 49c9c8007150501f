//! Per-attribute balanced binary search trees of pivot images.
//!
//! Each node stores the lower-median image of the subset it receives; images
//! below it in sorted order go left, the rest go right, and the pivot itself
//! appears in no descendant. Nodes live in an arena in preorder, root first.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relevance::{FeedbackConstraint, Response};
use crate::ImageId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub pivot_image: ImageId,
    pub pivot_value: f64,
    pub left: Option<usize>,
    pub right: Option<usize>,
    pub subset_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeTree {
    nodes: Vec<TreeNode>,
}

impl AttributeTree {
    /// Builds the tree over `values[i]` for every image `i`.
    pub fn build(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("attribute values"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("attribute value of image {i}")));
        }
        let mut sorted: Vec<ImageId> = (0..values.len()).collect();
        sorted.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        let mut nodes = Vec::with_capacity(values.len());
        build_into(&sorted, values, &mut nodes);
        Ok(Self { nodes })
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn node(&self, index: usize) -> &TreeNode {
        &self.nodes[index]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of nodes on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn go(t: &AttributeTree, i: Option<usize>) -> usize {
            match i {
                None => 0,
                Some(i) => 1 + go(t, t.nodes[i].left).max(go(t, t.nodes[i].right)),
            }
        }
        go(self, Some(0))
    }

    /// Pivot values in in-order traversal.
    pub fn in_order_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = Vec::new();
        let mut cur = Some(0);
        while cur.is_some() || !stack.is_empty() {
            while let Some(i) = cur {
                stack.push(i);
                cur = self.nodes[i].left;
            }
            let i = stack.pop().expect("stack nonempty");
            out.push(self.nodes[i].pivot_value);
            cur = self.nodes[i].right;
        }
        out
    }

    fn from_flat(flat: &[FlatNode]) -> Result<Self> {
        if flat.is_empty() {
            return Err(Error::Empty("tree nodes"));
        }
        let mut nodes: Vec<TreeNode> = flat
            .iter()
            .map(|f| TreeNode {
                pivot_image: f.pivot_image,
                pivot_value: f.pivot_value,
                left: f.left_index,
                right: f.right_index,
                subset_size: 0,
            })
            .collect();
        for (i, n) in nodes.iter().enumerate() {
            for child in [n.left, n.right].into_iter().flatten() {
                if child <= i || child >= nodes.len() {
                    return Err(Error::invalid(
                        "tree",
                        format!("bad child index {child} at node {i}"),
                    ));
                }
            }
        }
        // Children always follow their parent, so a reverse sweep sees them first.
        for i in (0..nodes.len()).rev() {
            let size = 1
                + nodes[i].left.map_or(0, |c| nodes[c].subset_size)
                + nodes[i].right.map_or(0, |c| nodes[c].subset_size);
            nodes[i].subset_size = size;
        }
        Ok(Self { nodes })
    }

    fn to_flat(&self) -> Vec<FlatNode> {
        self.nodes
            .iter()
            .map(|n| FlatNode {
                pivot_image: n.pivot_image,
                pivot_value: n.pivot_value,
                left_index: n.left,
                right_index: n.right,
            })
            .collect()
    }
}

fn build_into(sorted: &[ImageId], values: &[f64], nodes: &mut Vec<TreeNode>) -> Option<usize> {
    if sorted.is_empty() {
        return None;
    }
    let mid = (sorted.len() - 1) / 2;
    let pivot = sorted[mid];
    let index = nodes.len();
    nodes.push(TreeNode {
        pivot_image: pivot,
        pivot_value: values[pivot],
        left: None,
        right: None,
        subset_size: sorted.len(),
    });
    let left = build_into(&sorted[..mid], values, nodes);
    let right = build_into(&sorted[mid + 1..], values, nodes);
    nodes[index].left = left;
    nodes[index].right = right;
    Some(index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cursor {
    At(usize),
    Exhausted,
}

/// One cursor per attribute tree; the current pivots are the nodes they point to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PivotSet {
    pub cursors: Vec<Cursor>,
}

impl PivotSet {
    /// All cursors at their tree roots.
    pub fn at_roots(trees: &[AttributeTree]) -> Self {
        Self {
            cursors: trees.iter().map(|t| Cursor::At(t.root())).collect(),
        }
    }

    /// Current `(attribute, pivot image)` pairs, skipping exhausted trees.
    pub fn live<'a>(
        &'a self,
        trees: &'a [AttributeTree],
    ) -> impl Iterator<Item = (usize, ImageId)> + 'a {
        self.cursors
            .iter()
            .enumerate()
            .filter_map(move |(m, c)| match c {
                Cursor::At(node) => Some((m, trees[m].node(*node).pivot_image)),
                Cursor::Exhausted => None,
            })
    }

    pub fn is_exhausted(&self) -> bool {
        self.cursors.iter().all(|c| *c == Cursor::Exhausted)
    }

    pub fn pivot(&self, trees: &[AttributeTree], attribute: usize) -> Option<ImageId> {
        match self.cursors.get(attribute)? {
            Cursor::At(node) => Some(trees[attribute].node(*node).pivot_image),
            Cursor::Exhausted => None,
        }
    }

    /// Moves the cursor for `attribute` after the user answered `response`.
    pub fn descend(
        &mut self,
        trees: &[AttributeTree],
        attribute: usize,
        response: Response,
    ) -> Result<()> {
        let cursor = self
            .cursors
            .get_mut(attribute)
            .ok_or(Error::UnknownAttribute {
                attribute,
                m: trees.len(),
            })?;
        let Cursor::At(node) = *cursor else {
            return Err(Error::CursorExhausted(attribute));
        };
        let node = trees[attribute].node(node);
        let next = match response {
            Response::Less => node.left,
            Response::More => node.right,
            Response::Equal => None,
        };
        *cursor = next.map_or(Cursor::Exhausted, Cursor::At);
        Ok(())
    }

    /// Descends when `c` happens to answer the current pivot question for its
    /// attribute; returns whether it did.
    pub fn observe(&mut self, trees: &[AttributeTree], c: &FeedbackConstraint) -> Result<bool> {
        if self.pivot(trees, c.attribute) == Some(c.ref_image) {
            self.descend(trees, c.attribute, c.response)?;
            return Ok(true);
        }
        Ok(false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FlatNode {
    pivot_image: ImageId,
    pivot_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    left_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    right_index: Option<usize>,
}

/// Index file: attribute name to the flattened tree, root at index 0.
pub fn save_trees(
    trees: &[AttributeTree],
    attribute_names: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let map: BTreeMap<&str, Vec<FlatNode>> = attribute_names
        .iter()
        .zip(trees)
        .map(|(name, t)| (name.as_str(), t.to_flat()))
        .collect();
    let text = serde_json::to_string(&map).expect("trees serialize");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_trees(
    path: impl AsRef<Path>,
    attribute_names: &[String],
) -> Result<Vec<AttributeTree>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trees(&text, attribute_names)
}

pub fn parse_trees(text: &str, attribute_names: &[String]) -> Result<Vec<AttributeTree>> {
    let mut map: BTreeMap<String, Vec<FlatNode>> = serde_json::from_str(text)?;
    attribute_names
        .iter()
        .map(|name| {
            let flat = map.remove(name).ok_or_else(|| {
                Error::invalid("index", format!("missing tree for attribute {name:?}"))
            })?;
            AttributeTree::from_flat(&flat)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn values(n: usize) -> Vec<f64> {
        (1..=n).map(|v| v as f64).collect()
    }

    #[test]
    fn odd_count_splits_evenly() {
        let t = AttributeTree::build(&values(7)).unwrap();
        let root = t.node(0);
        assert_eq!(root.pivot_value, 4.0);
        assert_eq!(t.node(root.left.unwrap()).subset_size, 3);
        assert_eq!(t.node(root.right.unwrap()).subset_size, 3);
    }

    #[test]
    fn even_count_uses_lower_median() {
        let v = values(8);
        let t = AttributeTree::build(&v).unwrap();
        // Oracle: sort, take index (k-1)/2, partition around it.
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[(sorted.len() - 1) / 2];
        let root = t.node(0);
        assert_eq!(root.pivot_value, median);
        assert_eq!(
            t.node(root.left.unwrap()).subset_size,
            sorted.iter().filter(|&&x| x < median).count()
        );
        assert_eq!(t.node(root.right.unwrap()).subset_size, 4);
    }

    #[test]
    fn single_image_tree() {
        let t = AttributeTree::build(&[0.3]).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t.node(0).left.is_none() && t.node(0).right.is_none());
        assert!(AttributeTree::build(&[]).is_err());
    }

    #[test]
    fn descend_follows_responses() {
        let trees = vec![AttributeTree::build(&values(7)).unwrap()];
        let mut p = PivotSet::at_roots(&trees);
        p.descend(&trees, 0, Response::More).unwrap();
        let Cursor::At(i) = p.cursors[0] else {
            panic!()
        };
        assert_eq!(trees[0].node(i).pivot_value, 6.0);
        p.descend(&trees, 0, Response::More).unwrap();
        p.descend(&trees, 0, Response::More).unwrap();
        assert_eq!(p.cursors[0], Cursor::Exhausted);
        assert!(matches!(
            p.descend(&trees, 0, Response::Less),
            Err(Error::CursorExhausted(0))
        ));
    }

    #[test]
    fn equal_exhausts() {
        let trees = vec![AttributeTree::build(&values(15)).unwrap()];
        let mut p = PivotSet::at_roots(&trees);
        p.descend(&trees, 0, Response::Less).unwrap();
        p.descend(&trees, 0, Response::Equal).unwrap();
        assert!(p.is_exhausted());
    }

    #[test]
    fn ties_broken_by_id() {
        let t = AttributeTree::build(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(t.node(0).pivot_image, 1);
        assert_eq!(t.in_order_values(), vec![1.0; 3]);
    }

    #[test]
    fn flat_round_trip() {
        let names = vec!["a".to_string(), "b".to_string()];
        let trees = vec![
            AttributeTree::build(&[0.4, 0.1, 0.9, 0.3]).unwrap(),
            AttributeTree::build(&[3.0, 2.0, 1.0, 0.0]).unwrap(),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        save_trees(&trees, &names, &path).unwrap();
        assert_eq!(load_trees(&path, &names).unwrap(), trees);
    }
}
