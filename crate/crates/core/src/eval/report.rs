use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::benchmark::{EntryOutcome, EntrySegmentationScore, Failure, GraspEvalRecord, PlanRecord};
use super::metrics::{hr_accuracy, SegMetrics};
use super::EvalError;
use crate::config::PipelineConfig;
use crate::dataset::{taxonomy, Conventionality};
use crate::pipeline::Method;
use crate::reasoner::{RobotGraspRegion, TaskPlan};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegMeans {
    pub detection_rate: f64,
    pub f1: f64,
    pub iou: f64,
}

impl SegMeans {
    fn mean<'a>(items: impl Iterator<Item = &'a SegMetrics>) -> Option<Self> {
        let v: Vec<&SegMetrics> = items.collect();
        let n = v.len() as f64;
        (!v.is_empty()).then(|| Self {
            detection_rate: v.iter().map(|m| m.detection_rate).sum::<f64>() / n,
            f1: v.iter().map(|m| m.f1).sum::<f64>() / n,
            iou: v.iter().map(|m| m.iou).sum::<f64>() / n,
        })
    }

    fn mean_of(rows: &[&SegMeans]) -> Option<Self> {
        let n = rows.len() as f64;
        (!rows.is_empty()).then(|| Self {
            detection_rate: rows.iter().map(|m| m.detection_rate).sum::<f64>() / n,
            f1: rows.iter().map(|m| m.f1).sum::<f64>() / n,
            iou: rows.iter().map(|m| m.iou).sum::<f64>() / n,
        })
    }
}

/// Per-class means over instances and poses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSegRow {
    pub object_class: String,
    pub instances: usize,
    pub baseline: SegMeans,
    pub ours: SegMeans,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub group: String,
    pub successes: usize,
    pub total: usize,
    /// Percent; absent when the group is empty.
    pub success_rate: Option<f64>,
}

impl GroupScore {
    fn new(group: &str, records: &[&GraspEvalRecord]) -> Self {
        let successes = records.iter().filter(|r| r.success).count();
        Self {
            group: group.to_string(),
            successes,
            total: records.len(),
            success_rate: (!records.is_empty()).then(|| 100.0 * successes as f64 / records.len() as f64),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: Method,
    pub groups: Vec<GroupScore>,
    pub overall: GroupScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HrRow {
    pub group: String,
    pub pairs: usize,
    pub human: Option<f64>,
    pub robot: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config_fingerprint: String,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub entries: usize,
    pub segmentation: Vec<ClassSegRow>,
    pub segmentation_mean: Option<ClassSegRow>,
    pub grasp: Vec<MethodRow>,
    pub task_reasoning: Vec<HrRow>,
    pub entry_segmentation: Vec<EntrySegmentationScore>,
    pub plans: Vec<PlanRecord>,
    pub records: Vec<GraspEvalRecord>,
    pub failures: Vec<Failure>,
}

fn class_rank(class: &str) -> (usize, String) {
    let pos = taxonomy().classes().position(|c| c == class).unwrap_or(usize::MAX);
    (pos, class.to_string())
}

fn method_rank(m: Method) -> usize {
    Method::ALL.iter().position(|x| *x == m).expect("listed")
}

impl BenchmarkReport {
    pub(super) fn assemble(cfg: &PipelineConfig, methods: &[Method], entries: usize, outcomes: Vec<EntryOutcome>) -> Self {
        let mut seg = Vec::new();
        let mut plans = Vec::new();
        let mut records = Vec::new();
        let mut failures = Vec::new();
        for o in outcomes {
            seg.extend(o.segmentation);
            plans.extend(o.plans);
            records.extend(o.records);
            failures.extend(o.failures);
        }
        seg.sort_by(|a, b| a.entry.cmp(&b.entry));
        plans.sort_by(|a, b| (&a.entry, &a.task).cmp(&(&b.entry, &b.task)));
        records.sort_by(|a, b| (&a.entry, &a.task, method_rank(a.method)).cmp(&(&b.entry, &b.task, method_rank(b.method))));
        failures.sort_by(|a, b| {
            (&a.entry, &a.task, a.method.map(method_rank)).cmp(&(&b.entry, &b.task, b.method.map(method_rank)))
        });

        let mut by_class: BTreeMap<(usize, String), Vec<&EntrySegmentationScore>> = BTreeMap::new();
        for s in &seg {
            by_class.entry(class_rank(&s.object_class)).or_default().push(s);
        }
        let segmentation: Vec<ClassSegRow> = by_class
            .into_iter()
            .map(|((_, class), v)| ClassSegRow {
                object_class: class,
                instances: v.len(),
                baseline: SegMeans::mean(v.iter().map(|s| &s.baseline)).expect("non-empty"),
                ours: SegMeans::mean(v.iter().map(|s| &s.ours)).expect("non-empty"),
            })
            .collect();
        let segmentation_mean = (!segmentation.is_empty()).then(|| ClassSegRow {
            object_class: "mean".into(),
            instances: seg.len(),
            baseline: SegMeans::mean_of(&segmentation.iter().map(|r| &r.baseline).collect::<Vec<_>>()).expect("rows"),
            ours: SegMeans::mean_of(&segmentation.iter().map(|r| &r.ours).collect::<Vec<_>>()).expect("rows"),
        });

        let mut ordered: Vec<Method> = methods.to_vec();
        ordered.sort_by_key(|m| method_rank(*m));
        ordered.dedup();
        let grasp = ordered
            .iter()
            .map(|&m| {
                let mine: Vec<&GraspEvalRecord> = records.iter().filter(|r| r.method == m).collect();
                MethodRow {
                    method: m,
                    groups: Conventionality::ALL
                        .iter()
                        .map(|g| {
                            let rs: Vec<&GraspEvalRecord> =
                                mine.iter().copied().filter(|r| r.conventionality == *g).collect();
                            GroupScore::new(g.as_str(), &rs)
                        })
                        .collect(),
                    overall: GroupScore::new("all", &mine),
                }
            })
            .collect();

        let hr_row = |group: &str, rows: Vec<&PlanRecord>| {
            let as_plans: Vec<TaskPlan> = rows
                .iter()
                .map(|p| TaskPlan {
                    post_task_description: String::new(),
                    relevant_parts: Vec::new(),
                    human_grasp_part: p.human_part.clone(),
                    robot_grasp_region: RobotGraspRegion {
                        description: String::new(),
                        part: p.robot_part.clone(),
                    },
                })
                .collect();
            let gt: Vec<(String, String)> = rows
                .iter()
                .map(|p| (p.reference_human.clone(), p.reference_robot.clone()))
                .collect();
            let acc = hr_accuracy(&as_plans, &gt).ok();
            HrRow {
                group: group.to_string(),
                pairs: rows.len(),
                human: acc.map(|a| a.human),
                robot: acc.map(|a| a.robot),
            }
        };
        let mut task_reasoning: Vec<HrRow> = Conventionality::ALL
            .iter()
            .map(|g| hr_row(g.as_str(), plans.iter().filter(|p| p.conventionality == *g).collect()))
            .collect();
        task_reasoning.push(hr_row("all", plans.iter().collect()));

        Self {
            config_fingerprint: cfg.fingerprint(),
            seed: cfg.seed,
            methods: ordered,
            entries,
            segmentation,
            segmentation_mean,
            grasp,
            task_reasoning,
            entry_segmentation: seg,
            plans,
            records,
            failures,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        serde_json::from_str(text).map_err(|e| EvalError::Input(format!("not a benchmark report: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    /// Tables in the column order of the published results.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let pct = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        let _ = writeln!(s, "config {} seed {}", self.config_fingerprint, self.seed);
        let _ = writeln!(s, "entries {}, failures {}", self.entries, self.failures.len());
        let _ = writeln!(s);
        let _ = writeln!(s, "Part segmentation");
        let _ = writeln!(
            s,
            "{:<18} {:>4} | {:>7} {:>5} {:>7} | {:>7} {:>5} {:>7}",
            "class", "n", "base DR", "F1", "IoU", "ours DR", "F1", "IoU"
        );
        for r in self.segmentation.iter().chain(&self.segmentation_mean) {
            let _ = writeln!(
                s,
                "{:<18} {:>4} | {:>7.2} {:>5.2} {:>7.2} | {:>7.2} {:>5.2} {:>7.2}",
                r.object_class,
                r.instances,
                r.baseline.detection_rate,
                r.baseline.f1,
                r.baseline.iou,
                r.ours.detection_rate,
                r.ours.f1,
                r.ours.iou
            );
        }
        let groups: Vec<&str> = Conventionality::ALL.iter().map(|g| g.as_str()).collect();
        let _ = writeln!(s);
        let _ = writeln!(s, "Task reasoning accuracy (%)");
        let _ = writeln!(s, "{:<22} {:>5} {:>7} {:>7}", "group", "pairs", "H", "R");
        for r in &self.task_reasoning {
            let _ = writeln!(s, "{:<22} {:>5} {:>7} {:>7}", r.group, r.pairs, pct(r.human), pct(r.robot));
        }
        if !self.grasp.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "Grasp success (%)");
            let _ = write!(s, "{:<14}", "method");
            for g in &groups {
                let _ = write!(s, " {g:>21}");
            }
            let _ = writeln!(s, " {:>8}", "all");
            for row in &self.grasp {
                let _ = write!(s, "{:<14}", row.method.as_str());
                for g in &row.groups {
                    let _ = write!(s, " {:>21}", pct(g.success_rate));
                }
                let _ = writeln!(s, " {:>8}", pct(row.overall.success_rate));
            }
        }
        if !self.failures.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "Failures");
            for f in &self.failures {
                let _ = writeln!(
                    s,
                    "{} {} {} (exit {}): {}",
                    f.entry,
                    f.task.as_deref().unwrap_or("-"),
                    f.method.map_or("-", Method::as_str),
                    f.exit_code,
                    f.message
                );
            }
        }
        s
    }

    /// One row per number: `table,key,method,group,metric,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("table,key,method,group,metric,value\n");
        let esc = |x: &str| {
            if x.contains([',', '"', '\n']) {
                format!("\"{}\"", x.replace('"', "\"\""))
            } else {
                x.to_string()
            }
        };
        for r in self.segmentation.iter().chain(&self.segmentation_mean) {
            for (method, m) in [("baseline", &r.baseline), ("ours", &r.ours)] {
                for (metric, v) in [("dr", m.detection_rate), ("f1", m.f1), ("iou", m.iou)] {
                    let _ = writeln!(s, "segmentation,{},{method},,{metric},{v}", esc(&r.object_class));
                }
            }
        }
        for r in &self.task_reasoning {
            for (metric, v) in [("human", r.human), ("robot", r.robot)] {
                if let Some(v) = v {
                    let _ = writeln!(s, "task_reasoning,,,{},{metric},{v}", r.group);
                }
            }
        }
        for row in &self.grasp {
            for g in row.groups.iter().chain(std::iter::once(&row.overall)) {
                if let Some(v) = g.success_rate {
                    let _ = writeln!(s, "grasp,,{},{},success_rate,{v}", row.method, g.group);
                }
            }
        }
        for r in &self.records {
            let _ = writeln!(
                s,
                "record,{},{},{},success,{}",
                esc(&format!("{}|{}", r.entry, r.task)),
                r.method,
                r.conventionality.as_str(),
                u8::from(r.success)
            );
        }
        s
    }

    /// Writes `report.json`, `report.txt` and optionally `report.csv` into `dir`.
    pub fn write(&self, dir: &Path, csv: bool) -> Result<(), EvalError> {
        let io = |p: &Path, e: std::io::Error| EvalError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let mut files = vec![("report.json", self.to_json()), ("report.txt", self.to_text())];
        if csv {
            files.push(("report.csv", self.to_csv()));
        }
        for (name, text) in files {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| io(&p, e))?;
        }
        Ok(())
    }
}

/// Side-by-side summary of two reports. Reports from different
/// configurations are refused unless `force` is set.
pub fn compare(a: &BenchmarkReport, b: &BenchmarkReport, force: bool) -> Result<String, EvalError> {
    if a.config_fingerprint != b.config_fingerprint && !force {
        return Err(EvalError::Fingerprint {
            a: a.config_fingerprint.clone(),
            b: b.config_fingerprint.clone(),
        });
    }
    let mut s = String::new();
    if a.config_fingerprint != b.config_fingerprint {
        let _ = writeln!(s, "warning: configurations differ");
    }
    let _ = writeln!(s, "{:<28} {:>10} {:>10} {:>10}", "metric", "a", "b", "b - a");
    let mut line = |name: String, x: Option<f64>, y: Option<f64>| {
        let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        let d = x.zip(y).map(|(x, y)| y - x);
        let _ = writeln!(s, "{:<28} {:>10} {:>10} {:>10}", name, f(x), f(y), f(d));
    };
    let (ma, mb) = (a.segmentation_mean.as_ref(), b.segmentation_mean.as_ref());
    line("ours DR".into(), ma.map(|r| r.ours.detection_rate), mb.map(|r| r.ours.detection_rate));
    line("ours F1".into(), ma.map(|r| r.ours.f1), mb.map(|r| r.ours.f1));
    line("ours IoU".into(), ma.map(|r| r.ours.iou), mb.map(|r| r.ours.iou));
    let mut methods: Vec<Method> = a.methods.iter().chain(&b.methods).copied().collect();
    methods.sort_by_key(|m| method_rank(*m));
    methods.dedup();
    let rate = |r: &BenchmarkReport, m: Method| r.grasp.iter().find(|x| x.method == m).and_then(|x| x.overall.success_rate);
    for m in methods {
        line(format!("{m} success"), rate(a, m), rate(b, m));
    }
    Ok(s)
}
