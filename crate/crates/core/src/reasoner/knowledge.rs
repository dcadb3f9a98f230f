//! Task knowledge and part-compatibility tables shipped as data files.

use std::sync::LazyLock;

use serde::Deserialize;

#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
pub struct KnowledgeEntry {
    pub object_class: String,
    pub aliases: Vec<String>,
    pub human: String,
    pub robot: String,
    pub description: String,
    pub confidence: String,
}

#[derive(Deserialize)]
struct KnowledgeFile {
    entries: Vec<KnowledgeEntry>,
}

#[derive(Deserialize)]
struct PairRule {
    object_class: String,
    parts: [String; 2],
}

#[derive(Deserialize)]
struct CompatFile {
    compatible: Vec<PairRule>,
    incompatible: Vec<PairRule>,
}

static KNOWLEDGE: LazyLock<Vec<KnowledgeEntry>> = LazyLock::new(|| {
    let f: KnowledgeFile =
        serde_json::from_str(include_str!("../../data/knowledge.json")).expect("knowledge table parses");
    f.entries
});

static COMPAT: LazyLock<CompatFile> =
    LazyLock::new(|| serde_json::from_str(include_str!("../../data/compat.json")).expect("compat table parses"));

/// Which extent of a part stands out against the rest of the object.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeTrait {
    /// Longest along the object's dominant axis.
    Longest,
    /// Widest across the dominant axis.
    Widest,
}

const SHAPE_CUES: &[(&str, &str, ShapeTrait)] = &[
    ("hammer", "handle", ShapeTrait::Longest),
    ("knife", "blade", ShapeTrait::Widest),
    ("pan", "body", ShapeTrait::Widest),
    ("screwdriver", "handle", ShapeTrait::Widest),
    ("spoon", "bowl", ShapeTrait::Widest),
    ("toothbrush", "handle", ShapeTrait::Longest),
];

/// Part that can be recognized by shape alone, for orienting a class along its axis.
pub fn shape_cue(object_class: &str) -> Option<(&'static str, ShapeTrait)> {
    SHAPE_CUES
        .iter()
        .find(|(c, _, _)| *c == object_class)
        .map(|&(_, p, t)| (p, t))
}

pub fn knowledge_table() -> &'static [KnowledgeEntry] {
    &KNOWLEDGE
}

/// Entry whose longest alias occurs in the task text; earlier entries win ties.
pub fn lookup(object_class: &str, task_text: &str) -> Option<&'static KnowledgeEntry> {
    let task = task_text.to_lowercase();
    let mut best: Option<(&KnowledgeEntry, usize)> = None;
    for e in KNOWLEDGE.iter().filter(|e| e.object_class == object_class) {
        for a in &e.aliases {
            if task.contains(a.as_str()) && best.is_none_or(|(_, len)| a.len() > len) {
                best = Some((e, a.len()));
            }
        }
    }
    best.map(|(e, _)| e)
}

/// Whether two labels may share pixels. Unlisted pairs are incompatible.
pub fn compatible(object_class: &str, a: &str, b: &str) -> bool {
    let matches = |r: &PairRule| {
        r.object_class == object_class
            && ((r.parts[0] == a && r.parts[1] == b) || (r.parts[0] == b && r.parts[1] == a))
    };
    if COMPAT.incompatible.iter().any(matches) {
        return false;
    }
    COMPAT.compatible.iter().any(matches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{reference_tasks, taxonomy};

    #[test]
    fn table_covers_every_reference_task() {
        for r in reference_tasks() {
            let e = lookup(&r.spec.object_class, &r.spec.task_text).unwrap_or_else(|| panic!("{r:?}"));
            assert_eq!(e.human, r.human_part, "{r:?}");
            assert_eq!(e.robot, r.robot_part, "{r:?}");
        }
    }

    #[test]
    fn table_parts_are_in_taxonomy() {
        for e in knowledge_table() {
            assert!(taxonomy().contains_part(&e.object_class, &e.human), "{e:?}");
            assert!(taxonomy().contains_part(&e.object_class, &e.robot), "{e:?}");
        }
    }

    #[test]
    fn free_text_matches_by_longest_alias() {
        assert_eq!(lookup("hammer", "Hammer a nail").unwrap().robot, "head");
        assert_eq!(lookup("screwdriver", "hammer a nail").unwrap().human, "shaft");
        assert_eq!(lookup("screwdriver", "tighten a screw").unwrap().human, "handle");
        assert!(lookup("laptop", "type").is_none());
    }

    #[test]
    fn compat_table() {
        assert!(compatible("mug", "rim", "body"));
        assert!(compatible("mug", "body", "rim"));
        assert!(!compatible("pan", "handle", "body"));
        assert!(!compatible("hammer", "handle", "head"));
    }
}
