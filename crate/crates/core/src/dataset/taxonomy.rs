use std::sync::LazyLock;

use serde::Serialize;

/// Fixed object-class to part-name table, in canonical order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PartTaxonomy {
    entries: Vec<(String, Vec<String>)>,
}

const TABLE: &[(&str, &[&str])] = &[
    ("bottle", &["cap", "neck", "body"]),
    ("hammer", &["handle", "head"]),
    ("knife", &["handle", "blade"]),
    ("mug", &["body", "handle", "rim"]),
    ("pan", &["handle", "body"]),
    ("plier", &["handles", "pivot", "jaws"]),
    ("scissor", &["handles", "pivot", "blades"]),
    ("screwdriver", &["handle", "shaft", "tip"]),
    ("spoon", &["handle", "bowl"]),
    ("spraying bottle", &["nozzle", "trigger", "body"]),
    ("stapler", &["base", "upper arm"]),
    ("toothbrush", &["handle", "brush head"]),
];

static TAXONOMY: LazyLock<PartTaxonomy> = LazyLock::new(|| PartTaxonomy {
    entries: TABLE
        .iter()
        .map(|(c, parts)| (c.to_string(), parts.iter().map(|p| p.to_string()).collect()))
        .collect(),
});

pub fn taxonomy() -> &'static PartTaxonomy {
    &TAXONOMY
}

impl PartTaxonomy {
    pub fn parts(&self, class: &str) -> Option<&[String]> {
        self.entries
            .iter()
            .find(|(c, _)| c == class)
            .map(|(_, p)| p.as_slice())
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(c, _)| c.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(c, p)| (c.as_str(), p.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Position of `part` within its class list.
    pub fn part_index(&self, class: &str, part: &str) -> Option<usize> {
        self.parts(class)?.iter().position(|p| p == part)
    }

    pub fn contains_part(&self, class: &str, part: &str) -> bool {
        self.part_index(class, part).is_some()
    }
}

/// Splits a possibly merged label (`"shaft+tip"`) into its components.
pub fn label_components(label: &str) -> Vec<&str> {
    label.split('+').collect()
}

/// Joins part names with `+`, ordered by taxonomy position; names unknown to
/// the class sort after known ones, alphabetically. Duplicates collapse.
pub fn merge_label<S: AsRef<str>>(class: &str, parts: &[S]) -> String {
    let mut names: Vec<&str> = parts
        .iter()
        .flat_map(|p| label_components(p.as_ref()))
        .collect();
    let tax = taxonomy();
    names.sort_by_key(|n| (tax.part_index(class, n).unwrap_or(usize::MAX), n.to_string()));
    names.dedup();
    names.join("+")
}

/// Sort key placing labels in taxonomy order of their first component.
pub fn label_order_key(class: &str, label: &str) -> (usize, String) {
    let first = label_components(label)[0];
    (
        taxonomy().part_index(class, first).unwrap_or(usize::MAX),
        label.to_string(),
    )
}
