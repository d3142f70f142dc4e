//! Five-level knowledge hierarchy: points, principles, and step annotations.
//!
//! The store is loaded once from a nested JSON file, fully validated, and is
//! immutable afterwards. Levels run 1 (domain) through 5 (knowledge point);
//! only level-5 leaves carry principles, between 1 and 7 each.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lowest level of the hierarchy; nodes at this level are knowledge points.
pub const LEAF_LEVEL: u8 = 5;

/// Principle count bounds for a leaf.
pub const MIN_PRINCIPLES: usize = 1;
pub const MAX_PRINCIPLES: usize = 7;

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse hierarchy: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("node {id}: level {level} outside [1,5]")]
    LevelOutOfRange { id: String, level: u8 },
    #[error("node {id}: root must be level 1 (got {level})")]
    RootNotLevelOne { id: String, level: u8 },
    #[error("node {id}: child level {child_level} does not follow parent level {parent_level}")]
    LevelMismatch {
        id: String,
        child_level: u8,
        parent_level: u8,
    },
    #[error("node {id}: principle count out of [1,7] (got {count})")]
    PrincipleCountOutOfRange { id: String, count: usize },
    #[error("node {id}: non-leaf node carries {count} principles")]
    NonLeafPrinciples { id: String, count: usize },
    #[error("node {id}: leaf nodes cannot have children")]
    LeafWithChildren { id: String },
    #[error("node {id}: branch ends at level {level}, before level 5")]
    IncompleteBranch { id: String, level: u8 },
    #[error("duplicate node id {id}")]
    DuplicateId { id: String },
    #[error("duplicate principle id {id}")]
    DuplicatePrincipleId { id: String },
    #[error("unknown knowledge point {id}")]
    UnknownPoint { id: String },
    #[error("knowledge point {id} is not a leaf")]
    NotALeaf { id: String },
    #[error("empty solution: no steps to annotate")]
    EmptySolution,
    #[error("step {index}: tagger produced no knowledge point for {text:?}")]
    UntaggedStep { index: usize, text: String },
}

/// One node of the hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgePoint {
    pub id: String,
    pub name: String,
    pub level: u8,
    pub parent_id: Option<String>,
    /// Non-empty only for level-5 leaves.
    pub principle_ids: Vec<String>,
}

/// Kind of a fundamental principle attached to a knowledge point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrincipleKind {
    Definition,
    Theorem,
    Application,
}

impl fmt::Display for PrincipleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrincipleKind::Definition => write!(f, "definition"),
            PrincipleKind::Theorem => write!(f, "theorem"),
            PrincipleKind::Application => write!(f, "application"),
        }
    }
}

/// A fundamental principle owned by exactly one leaf point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Principle {
    pub id: String,
    pub owner_point: String,
    pub kind: PrincipleKind,
    pub statement: String,
}

/// Step-level knowledge mapping for one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeAnnotation {
    pub problem_id: String,
    /// One leaf id per reasoning step, in step order.
    pub step_points: Vec<String>,
    pub principle_ids: Vec<String>,
}

/// Serialized node shape: nested objects with optional principles/children.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HierarchyNode {
    pub id: String,
    pub name: String,
    pub level: u8,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub principles: Vec<PrincipleEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<HierarchyNode>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrincipleEntry {
    pub id: String,
    pub kind: PrincipleKind,
    pub statement: String,
}

/// Immutable, validated knowledge store.
#[derive(Debug, Clone)]
pub struct KnowledgeHierarchy {
    points: BTreeMap<String, KnowledgePoint>,
    principles: BTreeMap<String, Principle>,
    children: BTreeMap<String, Vec<String>>,
    roots: Vec<String>,
}

/// Counts reported after a successful load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyCounts {
    pub points: usize,
    pub leaves: usize,
    pub principles: usize,
}

impl KnowledgeHierarchy {
    /// Build a store from pre-parsed root nodes, running all invariant checks.
    pub fn from_nodes(roots: Vec<HierarchyNode>) -> Result<Self, KnowledgeError> {
        let mut store = KnowledgeHierarchy {
            points: BTreeMap::new(),
            principles: BTreeMap::new(),
            children: BTreeMap::new(),
            roots: Vec::new(),
        };
        for node in &roots {
            if node.level != 1 {
                return Err(KnowledgeError::RootNotLevelOne {
                    id: node.id.clone(),
                    level: node.level,
                });
            }
            store.roots.push(node.id.clone());
            store.insert_node(node, None)?;
        }
        Ok(store)
    }

    fn insert_node(
        &mut self,
        node: &HierarchyNode,
        parent: Option<&HierarchyNode>,
    ) -> Result<(), KnowledgeError> {
        if node.level < 1 || node.level > LEAF_LEVEL {
            return Err(KnowledgeError::LevelOutOfRange {
                id: node.id.clone(),
                level: node.level,
            });
        }
        if let Some(p) = parent {
            if node.level != p.level + 1 {
                return Err(KnowledgeError::LevelMismatch {
                    id: node.id.clone(),
                    child_level: node.level,
                    parent_level: p.level,
                });
            }
        }
        let is_leaf = node.level == LEAF_LEVEL;
        if is_leaf {
            if !node.children.is_empty() {
                return Err(KnowledgeError::LeafWithChildren {
                    id: node.id.clone(),
                });
            }
            let count = node.principles.len();
            if !(MIN_PRINCIPLES..=MAX_PRINCIPLES).contains(&count) {
                return Err(KnowledgeError::PrincipleCountOutOfRange {
                    id: node.id.clone(),
                    count,
                });
            }
        } else {
            if !node.principles.is_empty() {
                return Err(KnowledgeError::NonLeafPrinciples {
                    id: node.id.clone(),
                    count: node.principles.len(),
                });
            }
            if node.children.is_empty() {
                return Err(KnowledgeError::IncompleteBranch {
                    id: node.id.clone(),
                    level: node.level,
                });
            }
        }
        if self.points.contains_key(&node.id) {
            return Err(KnowledgeError::DuplicateId {
                id: node.id.clone(),
            });
        }
        let mut principle_ids = Vec::with_capacity(node.principles.len());
        for entry in &node.principles {
            if self.principles.contains_key(&entry.id) {
                return Err(KnowledgeError::DuplicatePrincipleId {
                    id: entry.id.clone(),
                });
            }
            self.principles.insert(
                entry.id.clone(),
                Principle {
                    id: entry.id.clone(),
                    owner_point: node.id.clone(),
                    kind: entry.kind,
                    statement: entry.statement.clone(),
                },
            );
            principle_ids.push(entry.id.clone());
        }
        self.points.insert(
            node.id.clone(),
            KnowledgePoint {
                id: node.id.clone(),
                name: node.name.clone(),
                level: node.level,
                parent_id: parent.map(|p| p.id.clone()),
                principle_ids,
            },
        );
        let child_ids: Vec<String> = node.children.iter().map(|c| c.id.clone()).collect();
        self.children.insert(node.id.clone(), child_ids);
        for child in &node.children {
            self.insert_node(child, Some(node))?;
        }
        Ok(())
    }

    /// Parse a hierarchy from JSON text: either one root object or an array
    /// of root objects.
    pub fn from_json(text: &str) -> Result<Self, KnowledgeError> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let roots: Vec<HierarchyNode> = if value.is_array() {
            serde_json::from_value(value)?
        } else {
            vec![serde_json::from_value(value)?]
        };
        Self::from_nodes(roots)
    }

    pub fn point(&self, id: &str) -> Option<&KnowledgePoint> {
        self.points.get(id)
    }

    pub fn principle(&self, id: &str) -> Option<&Principle> {
        self.principles.get(id)
    }

    pub fn is_leaf(&self, id: &str) -> bool {
        self.points
            .get(id)
            .map(|p| p.level == LEAF_LEVEL)
            .unwrap_or(false)
    }

    pub fn roots(&self) -> &[String] {
        &self.roots
    }

    pub fn children(&self, id: &str) -> &[String] {
        self.children.get(id).map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// All leaf ids in sorted order.
    pub fn leaves(&self) -> Vec<&str> {
        self.points
            .values()
            .filter(|p| p.level == LEAF_LEVEL)
            .map(|p| p.id.as_str())
            .collect()
    }

    /// Level-1 ancestor of a point.
    pub fn domain_of(&self, id: &str) -> Option<&KnowledgePoint> {
        let mut current = self.points.get(id)?;
        while let Some(parent_id) = &current.parent_id {
            current = self.points.get(parent_id)?;
        }
        Some(current)
    }

    pub fn counts(&self) -> HierarchyCounts {
        HierarchyCounts {
            points: self.points.len(),
            leaves: self.points.values().filter(|p| p.level == LEAF_LEVEL).count(),
            principles: self.principles.len(),
        }
    }

    pub fn points(&self) -> impl Iterator<Item = &KnowledgePoint> {
        self.points.values()
    }

    pub fn principles(&self) -> impl Iterator<Item = &Principle> {
        self.principles.values()
    }

    /// Non-fatal consistency warnings, e.g. the principle total differing
    /// from the expected catalogue size.
    pub fn warnings(&self, expected_principles: Option<usize>) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(expected) = expected_principles {
            let actual = self.principles.len();
            if actual != expected {
                out.push(format!(
                    "principle total {actual} differs from expected {expected}"
                ));
            }
        }
        out
    }
}

/// Load and validate a hierarchy file, reporting counts on success.
pub fn load_hierarchy(path: &Path) -> Result<(KnowledgeHierarchy, HierarchyCounts), KnowledgeError> {
    let text = std::fs::read_to_string(path).map_err(|source| KnowledgeError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let store = KnowledgeHierarchy::from_json(&text)?;
    let counts = store.counts();
    Ok((store, counts))
}

/// A problem with a step-decomposed solution, ready for annotation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolvedProblem {
    pub id: String,
    /// Solution text split into reasoning steps.
    pub steps: Vec<String>,
}

/// Result of tagging one step.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedStep {
    pub point_id: String,
    pub principle_id: Option<String>,
}

/// Contract for resolving a solution step to a leaf knowledge point.
pub trait StepTagger {
    fn tag_step(&self, step: &str) -> Option<TaggedStep>;
}

/// Deterministic keyword-table tagger. The longest matching keyword wins;
/// equal lengths break lexicographically.
#[derive(Debug, Clone, Default)]
pub struct KeywordTagger {
    table: BTreeMap<String, TaggedStep>,
}

impl KeywordTagger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, keyword: &str, point_id: &str, principle_id: Option<&str>) {
        self.table.insert(
            keyword.to_lowercase(),
            TaggedStep {
                point_id: point_id.to_string(),
                principle_id: principle_id.map(str::to_string),
            },
        );
    }
}

impl StepTagger for KeywordTagger {
    fn tag_step(&self, step: &str) -> Option<TaggedStep> {
        let lowered = step.to_lowercase();
        let mut best: Option<(&String, &TaggedStep)> = None;
        for (keyword, tag) in &self.table {
            if lowered.contains(keyword.as_str()) {
                let better = match best {
                    None => true,
                    // longer keyword wins; BTreeMap order already fixes
                    // lexicographic order among equal lengths
                    Some((k, _)) => keyword.len() > k.len(),
                };
                if better {
                    best = Some((keyword, tag));
                }
            }
        }
        best.map(|(_, tag)| tag.clone())
    }
}

/// Map each solution step to a leaf knowledge point via the tagger.
pub fn annotate_problem(
    store: &KnowledgeHierarchy,
    problem: &SolvedProblem,
    tagger: &dyn StepTagger,
) -> Result<KnowledgeAnnotation, KnowledgeError> {
    if problem.steps.is_empty() {
        return Err(KnowledgeError::EmptySolution);
    }
    let mut step_points = Vec::with_capacity(problem.steps.len());
    let mut principle_ids = BTreeSet::new();
    for (index, step) in problem.steps.iter().enumerate() {
        let tag = tagger
            .tag_step(step)
            .ok_or_else(|| KnowledgeError::UntaggedStep {
                index,
                text: step.clone(),
            })?;
        let point = store
            .point(&tag.point_id)
            .ok_or_else(|| KnowledgeError::UnknownPoint {
                id: tag.point_id.clone(),
            })?;
        if point.level != LEAF_LEVEL {
            return Err(KnowledgeError::NotALeaf {
                id: tag.point_id.clone(),
            });
        }
        if let Some(pid) = &tag.principle_id {
            if store.principle(pid).is_none() {
                return Err(KnowledgeError::UnknownPoint { id: pid.clone() });
            }
            principle_ids.insert(pid.clone());
        }
        step_points.push(tag.point_id);
    }
    Ok(KnowledgeAnnotation {
        problem_id: problem.id.clone(),
        step_points,
        principle_ids: principle_ids.into_iter().collect(),
    })
}
