use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conventionality {
    ConventionalEasy,
    ConventionalComplex,
    Unconventional,
}

impl Conventionality {
    pub const ALL: [Conventionality; 3] = [
        Conventionality::ConventionalEasy,
        Conventionality::ConventionalComplex,
        Conventionality::Unconventional,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Conventionality::ConventionalEasy => "conventional-easy",
            Conventionality::ConventionalComplex => "conventional-complex",
            Conventionality::Unconventional => "unconventional",
        }
    }
}

/// An object class paired with the task the human performs after the handover.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub object_class: String,
    pub task_text: String,
    pub conventionality: Conventionality,
}

/// A benchmark task with the reference human and robot grasp parts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceTask {
    pub spec: TaskSpec,
    pub human_part: String,
    pub robot_part: String,
}

use Conventionality::*;

const PAIRS: &[(&str, &str, Conventionality, &str, &str)] = &[
    ("hammer", "hammer", ConventionalEasy, "handle", "head"),
    ("knife", "cut", ConventionalEasy, "handle", "blade"),
    ("mug", "drink", ConventionalEasy, "handle", "body"),
    ("screwdriver", "screw", ConventionalEasy, "handle", "shaft"),
    ("pan", "cook", ConventionalEasy, "handle", "body"),
    ("spoon", "stir", ConventionalEasy, "handle", "bowl"),
    ("scissor", "cut", ConventionalComplex, "handles", "blades"),
    ("plier", "pinch", ConventionalComplex, "handles", "jaws"),
    ("stapler", "staple", ConventionalComplex, "upper arm", "base"),
    ("bottle", "pour", ConventionalComplex, "body", "neck"),
    ("spraying bottle", "spray", ConventionalComplex, "trigger", "body"),
    ("toothbrush", "brush teeth", ConventionalComplex, "handle", "brush head"),
    ("screwdriver", "hammer", Unconventional, "shaft", "handle"),
    ("screwdriver", "play xylophone", Unconventional, "shaft", "handle"),
    ("spoon", "open lid of jar", Unconventional, "bowl", "handle"),
    ("toothbrush", "push pin into a hole", Unconventional, "brush head", "handle"),
];

/// The sixteen benchmark object-task pairs.
pub fn task_pairs() -> Vec<TaskSpec> {
    reference_tasks().into_iter().map(|r| r.spec).collect()
}

pub fn reference_tasks() -> Vec<ReferenceTask> {
    PAIRS
        .iter()
        .map(|&(class, task, conv, human, robot)| ReferenceTask {
            spec: TaskSpec {
                object_class: class.into(),
                task_text: task.into(),
                conventionality: conv,
            },
            human_part: human.into(),
            robot_part: robot.into(),
        })
        .collect()
}

/// Reference entry for a class/task pair, matched case-insensitively.
pub fn find_reference(object_class: &str, task_text: &str) -> Option<ReferenceTask> {
    let task = task_text.trim().to_lowercase();
    reference_tasks()
        .into_iter()
        .find(|r| r.spec.object_class == object_class && r.spec.task_text == task)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::taxonomy;

    #[test]
    fn sixteen_pairs_with_groups() {
        let pairs = task_pairs();
        assert_eq!(pairs.len(), 16);
        let count = |c| pairs.iter().filter(|p| p.conventionality == c).count();
        assert_eq!(count(ConventionalEasy), 6);
        assert_eq!(count(ConventionalComplex), 6);
        assert_eq!(count(Unconventional), 4);
        let has = |class: &str, task: &str, c| {
            pairs
                .iter()
                .any(|p| p.object_class == class && p.task_text == task && p.conventionality == c)
        };
        assert!(has("screwdriver", "play xylophone", Unconventional));
        assert!(has("stapler", "staple", ConventionalComplex));
        assert!(has("hammer", "hammer", ConventionalEasy));
    }

    #[test]
    fn reference_parts_exist_in_taxonomy() {
        for r in reference_tasks() {
            let t = taxonomy();
            assert!(t.contains_part(&r.spec.object_class, &r.human_part), "{r:?}");
            assert!(t.contains_part(&r.spec.object_class, &r.robot_part), "{r:?}");
            assert_ne!(r.human_part, r.robot_part);
        }
    }

    #[test]
    fn serde_uses_kebab_case() {
        assert_eq!(serde_json::to_string(&Unconventional).unwrap(), "\"unconventional\"");
        assert_eq!(
            serde_json::to_string(&ConventionalEasy).unwrap(),
            format!("\"{}\"", ConventionalEasy.as_str())
        );
        assert!(find_reference("spoon", "Open lid of jar ").is_some());
    }
}
