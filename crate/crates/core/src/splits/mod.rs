//! Stratified k-fold and signer-independent partitioning with leakage checks.

mod plan;

pub use plan::{Assignment, PlanEntry, Role, SplitPlan, SplitStrategy};

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;

use crate::ingest::ClipManifest;
use crate::seed::{derive_n, rng};

#[derive(Debug, thiserror::Error)]
pub enum SplitError {
    #[error("invalid split configuration: {0}")]
    Config(String),
    #[error("plan line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn unique_ids(manifest: &ClipManifest) -> Result<(), SplitError> {
    let mut seen = BTreeSet::new();
    for r in &manifest.records {
        if !seen.insert(r.clip_id()) {
            return Err(SplitError::Config(format!("duplicate clip id {:?}", r.clip_id())));
        }
    }
    Ok(())
}

/// Deals every class's seeded shuffle round-robin into `k` folds and returns
/// record indices per fold. The dealing position carries over from one class
/// to the next so fold sizes stay balanced as well.
fn deal_folds(manifest: &ClipManifest, records: &[usize], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in records {
        by_class.entry(manifest.class_of(&manifest.records[i])).or_default().push(i);
    }
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for (class, mut members) in by_class {
        members.shuffle(&mut rng(derive_n(seed, &["stratified_kfold"], class as u64)));
        for i in members {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    folds
}

fn check_k(k: usize) -> Result<(), SplitError> {
    if k < 2 {
        return Err(SplitError::Config(format!("k must be at least 2, got {k}")));
    }
    Ok(())
}

/// Splits the manifest into `k` class-stratified folds of clip ids.
pub fn stratified_kfold(
    manifest: &ClipManifest,
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<String>>, SplitError> {
    check_k(k)?;
    unique_ids(manifest)?;
    let all: Vec<usize> = (0..manifest.len()).collect();
    Ok(deal_folds(manifest, &all, k, seed)
        .into_iter()
        .map(|f| f.into_iter().map(|i| manifest.records[i].clip_id().to_owned()).collect())
        .collect())
}

fn check_signers(
    manifest: &ClipManifest,
    test: &[String],
    val: &[String],
) -> Result<(), SplitError> {
    if let Some(s) = test.iter().find(|s| val.contains(s)) {
        return Err(SplitError::Config(format!(
            "signer {s:?} is in both the test and validation sets"
        )));
    }
    let known: BTreeSet<&str> = manifest.records.iter().map(|r| r.signer_id.as_str()).collect();
    for s in test.iter().chain(val) {
        if !known.contains(s.as_str()) {
            log::warn!("signer {s:?} does not appear in the manifest");
        }
    }
    Ok(())
}

fn entry(manifest: &ClipManifest, i: usize, assignment: Assignment) -> PlanEntry {
    let r = &manifest.records[i];
    PlanEntry {
        clip_id: r.clip_id().to_owned(),
        assignment,
        signer_id: r.signer_id.clone(),
        class_index: manifest.class_of(r),
    }
}

fn role_of(signer: &str, test: &[String], val: &[String]) -> Option<Role> {
    if test.iter().any(|s| s == signer) {
        Some(Role::Test)
    } else if val.iter().any(|s| s == signer) {
        Some(Role::Val)
    } else {
        None
    }
}

/// Routes each clip by signer: test signers to test, validation signers to
/// val, everyone else to train.
pub fn signer_split(
    manifest: &ClipManifest,
    test_signers: &[String],
    val_signers: &[String],
) -> Result<SplitPlan, SplitError> {
    unique_ids(manifest)?;
    check_signers(manifest, test_signers, val_signers)?;
    let entries = (0..manifest.len())
        .map(|i| {
            let role = role_of(&manifest.records[i].signer_id, test_signers, val_signers)
                .unwrap_or(Role::Train);
            entry(manifest, i, Assignment::Role(role))
        })
        .collect();
    Ok(SplitPlan {
        strategy: SplitStrategy::SignerHoldout {
            test_signers: test_signers.to_vec(),
            val_signers: val_signers.to_vec(),
        },
        entries,
    })
}

/// Builds the plan for any strategy.
pub fn build_plan(manifest: &ClipManifest, strategy: &SplitStrategy) -> Result<SplitPlan, SplitError> {
    match strategy {
        SplitStrategy::StratifiedKfold { k, seed } => {
            let folds = stratified_kfold(manifest, *k, *seed)?;
            let fold_of: BTreeMap<&str, usize> = folds
                .iter()
                .enumerate()
                .flat_map(|(f, ids)| ids.iter().map(move |id| (id.as_str(), f)))
                .collect();
            let entries = (0..manifest.len())
                .map(|i| {
                    let fold = fold_of[manifest.records[i].clip_id()];
                    entry(manifest, i, Assignment::Fold(fold))
                })
                .collect();
            Ok(SplitPlan {
                strategy: strategy.clone(),
                entries,
            })
        }
        SplitStrategy::SignerHoldout {
            test_signers,
            val_signers,
        } => signer_split(manifest, test_signers, val_signers),
        SplitStrategy::Composite {
            test_signers,
            val_signers,
            k,
            seed,
        } => {
            check_k(*k)?;
            unique_ids(manifest)?;
            check_signers(manifest, test_signers, val_signers)?;
            let mut roles = vec![None; manifest.len()];
            let mut pool = Vec::new();
            for (i, r) in manifest.records.iter().enumerate() {
                match role_of(&r.signer_id, test_signers, val_signers) {
                    Some(role) => roles[i] = Some(Assignment::Role(role)),
                    None => pool.push(i),
                }
            }
            for (f, members) in deal_folds(manifest, &pool, *k, *seed).into_iter().enumerate() {
                for i in members {
                    roles[i] = Some(Assignment::Fold(f));
                }
            }
            let entries = roles
                .into_iter()
                .enumerate()
                .map(|(i, a)| entry(manifest, i, a.expect("every record is routed")))
                .collect();
            Ok(SplitPlan {
                strategy: strategy.clone(),
                entries,
            })
        }
    }
}

/// One problem found by [`verify_no_leakage`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    /// The clip appears in more than one plan entry.
    DuplicateClip { clip_id: String, assignments: Vec<Assignment> },
    /// A signer's clips land in more than one held-out group.
    SignerLeak { signer_id: String, groups: Vec<String> },
    /// A manifest clip has no plan entry.
    Unassigned { clip_id: String },
    /// A plan entry names a clip the manifest does not contain.
    UnknownClip { clip_id: String },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::DuplicateClip {
                clip_id,
                assignments,
            } => {
                let a: Vec<String> = assignments.iter().map(ToString::to_string).collect();
                write!(f, "clip {clip_id} assigned {} times ({})", a.len(), a.join(", "))
            }
            Violation::SignerLeak { signer_id, groups } => {
                write!(f, "signer {signer_id} appears in {}", groups.join(" and "))
            }
            Violation::Unassigned { clip_id } => write!(f, "clip {clip_id} has no assignment"),
            Violation::UnknownClip { clip_id } => write!(f, "clip {clip_id} is not in the manifest"),
        }
    }
}

/// Outcome of [`verify_no_leakage`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LeakageReport {
    pub violations: Vec<Violation>,
    /// Per assignment group (`train`, `val`, `test`, `fold<i>`), clip counts
    /// per class index.
    pub class_histograms: BTreeMap<String, Vec<usize>>,
}

impl LeakageReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for LeakageReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (group, hist) in &self.class_histograms {
            writeln!(f, "{group}: {} clips, per class {:?}", hist.iter().sum::<usize>(), hist)?;
        }
        if self.violations.is_empty() {
            writeln!(f, "no leakage")
        } else {
            writeln!(f, "{} violation(s):", self.violations.len())?;
            for v in &self.violations {
                writeln!(f, "  {v}")?;
            }
            Ok(())
        }
    }
}

/// Checks that every clip is assigned exactly once and, for signer-based
/// strategies, that no signer spans train, val and test.
pub fn verify_no_leakage(plan: &SplitPlan, manifest: &ClipManifest) -> LeakageReport {
    let mut violations = Vec::new();
    let mut by_clip: BTreeMap<&str, Vec<Assignment>> = BTreeMap::new();
    for e in &plan.entries {
        by_clip.entry(&e.clip_id).or_default().push(e.assignment);
    }
    let manifest_ids: BTreeSet<&str> = manifest.records.iter().map(|r| r.clip_id()).collect();
    for r in &manifest.records {
        if !by_clip.contains_key(r.clip_id()) {
            violations.push(Violation::Unassigned {
                clip_id: r.clip_id().to_owned(),
            });
        }
    }
    for (id, assignments) in &by_clip {
        if !manifest_ids.contains(id) {
            violations.push(Violation::UnknownClip {
                clip_id: (*id).to_owned(),
            });
        }
        if assignments.len() > 1 {
            violations.push(Violation::DuplicateClip {
                clip_id: (*id).to_owned(),
                assignments: assignments.clone(),
            });
        }
    }
    if plan.strategy.holds_out_signers() {
        // folds all belong to the training pool
        let mut groups: BTreeMap<&str, BTreeSet<&'static str>> = BTreeMap::new();
        for e in &plan.entries {
            let g = match e.assignment {
                Assignment::Role(Role::Val) => "val",
                Assignment::Role(Role::Test) => "test",
                _ => "train",
            };
            groups.entry(&e.signer_id).or_default().insert(g);
        }
        for (signer, g) in groups {
            if g.len() > 1 {
                violations.push(Violation::SignerLeak {
                    signer_id: signer.to_owned(),
                    groups: g.into_iter().map(str::to_owned).collect(),
                });
            }
        }
    }
    let classes = manifest
        .num_classes()
        .max(plan.entries.iter().map(|e| e.class_index + 1).max().unwrap_or(0));
    let mut class_histograms: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for e in &plan.entries {
        class_histograms
            .entry(e.assignment.to_string())
            .or_insert_with(|| vec![0; classes])[e.class_index] += 1;
    }
    LeakageReport {
        violations,
        class_histograms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{FrameRate, ManifestRecord};
    use proptest::prelude::*;

    fn manifest(spec: &[(&str, &str)]) -> ClipManifest {
        ClipManifest::new(
            spec.iter()
                .enumerate()
                .map(|(i, (label, signer))| ManifestRecord {
                    clip_path: format!("clips/c{i:04}.sgnf"),
                    gloss_label: label.to_string(),
                    signer_id: signer.to_string(),
                    frame_count: 10,
                    fps: FrameRate::whole(30),
                })
                .collect(),
        )
    }

    fn counts(m: &ClipManifest, fold: &[String], class: &str) -> usize {
        fold.iter()
            .filter(|id| m.records.iter().any(|r| r.clip_id() == id.as_str() && r.gloss_label == class))
            .count()
    }

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn one_class_two_folds() {
        let m = manifest(&[("a", "u1"); 10]);
        let folds = stratified_kfold(&m, 2, 3).unwrap();
        assert_eq!(folds.iter().map(Vec::len).collect::<Vec<_>>(), vec![5, 5]);
    }

    #[test]
    fn two_classes_two_folds() {
        let mut spec = vec![("A", "u1"); 6];
        spec.extend([("B", "u1"); 4]);
        let m = manifest(&spec);
        for seed in 0..5 {
            let folds = stratified_kfold(&m, 2, seed).unwrap();
            for f in &folds {
                assert_eq!(counts(&m, f, "A"), 3);
                assert_eq!(counts(&m, f, "B"), 2);
            }
        }
    }

    #[test]
    fn more_folds_than_samples() {
        let m = manifest(&[("a", "u1"), ("a", "u1"), ("a", "u2"), ("b", "u1")]);
        let folds = stratified_kfold(&m, 5, 0).unwrap();
        let per: Vec<usize> = folds.iter().map(|f| counts(&m, f, "a")).collect();
        assert_eq!(per.iter().sum::<usize>(), 3);
        assert!(per.iter().all(|&c| c <= 1));
        assert!(stratified_kfold(&m, 1, 0).is_err());
    }

    fn signer_manifest() -> ClipManifest {
        let mut spec = Vec::new();
        for u in 1..=10 {
            for c in ["x", "y", "z"] {
                spec.push((c, ["U1", "U2", "U3", "U4", "U5", "U6", "U7", "U8", "U9", "U10"][u - 1]));
            }
        }
        manifest(&spec)
    }

    #[test]
    fn signer_holdout() {
        let m = signer_manifest();
        let plan = signer_split(&m, &strings(&["U4", "U8"]), &strings(&["U5"])).unwrap();
        let report = verify_no_leakage(&plan, &m);
        assert!(report.is_clean(), "{report}");
        for e in &plan.entries {
            let expect = match e.signer_id.as_str() {
                "U4" | "U8" => Role::Test,
                "U5" => Role::Val,
                _ => Role::Train,
            };
            assert_eq!(e.assignment, Assignment::Role(expect));
        }
        assert_eq!(report.class_histograms["test"], vec![2, 2, 2]);
    }

    #[test]
    fn empty_test_set_and_overlap() {
        let m = signer_manifest();
        let plan = signer_split(&m, &[], &strings(&["U5"])).unwrap();
        assert_eq!(plan.clips(Role::Train).len(), 27);
        assert!(plan.clips(Role::Test).is_empty());
        assert!(signer_split(&m, &strings(&["U5"]), &strings(&["U5"])).is_err());
    }

    #[test]
    fn detects_duplicate_and_signer_leak() {
        let m = signer_manifest();
        let mut plan = signer_split(&m, &strings(&["U4"]), &[]).unwrap();
        let mut dup = plan.entries[0].clone();
        dup.assignment = Assignment::Role(Role::Test);
        plan.entries.push(dup);
        let report = verify_no_leakage(&plan, &m);
        let dups = report
            .violations
            .iter()
            .filter(|v| matches!(v, Violation::DuplicateClip { .. }))
            .count();
        assert_eq!(dups, 1);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::SignerLeak { signer_id, .. } if signer_id == "U1")));
    }

    #[test]
    fn composite_keeps_test_outside_folds() {
        let m = signer_manifest();
        let strategy = SplitStrategy::Composite {
            test_signers: strings(&["U4", "U8"]),
            val_signers: strings(&["U5"]),
            k: 3,
            seed: 9,
        };
        let plan = build_plan(&m, &strategy).unwrap();
        assert!(verify_no_leakage(&plan, &m).is_clean());
        assert_eq!(plan.clips(Role::Test).len(), 6);
        assert_eq!(plan.num_folds(), 3);
        let (train, held) = plan.cv_fold(0).unwrap();
        assert_eq!(train.len() + held.len(), 21);
    }

    proptest! {
        #[test]
        fn kfold_invariants(sizes in prop::collection::vec(1usize..12, 1..5), k in 2usize..7, seed: u64) {
            let mut spec = Vec::new();
            for (c, &n) in sizes.iter().enumerate() {
                for _ in 0..n {
                    spec.push((["a", "b", "c", "d"][c], "u"));
                }
            }
            let m = manifest(&spec);
            let folds = stratified_kfold(&m, k, seed).unwrap();
            let mut all: Vec<&String> = folds.iter().flatten().collect();
            all.sort();
            all.dedup();
            prop_assert_eq!(all.len(), m.len());
            for c in ["a", "b", "c", "d"].iter().take(sizes.len()) {
                let per: Vec<usize> = folds.iter().map(|f| counts(&m, f, c)).collect();
                prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
            }
            let plan = build_plan(&m, &SplitStrategy::StratifiedKfold { k, seed }).unwrap();
            let text = plan.to_text();
            prop_assert_eq!(SplitPlan::parse(&text).unwrap().to_text(), text.clone());
            prop_assert_eq!(build_plan(&m, &SplitStrategy::StratifiedKfold { k, seed }).unwrap().to_text(), text);
        }

        #[test]
        fn signer_role_depends_only_on_signer(signers in prop::collection::vec(0usize..6, 1..40)) {
            let names = ["s0", "s1", "s2", "s3", "s4", "s5"];
            let spec: Vec<(&str, &str)> = signers.iter().map(|&s| ("g", names[s])).collect();
            let m = manifest(&spec);
            let plan = signer_split(&m, &strings(&["s1", "s2"]), &strings(&["s3"])).unwrap();
            let mut role: BTreeMap<&str, Assignment> = BTreeMap::new();
            for e in &plan.entries {
                prop_assert_eq!(*role.entry(&e.signer_id).or_insert(e.assignment), e.assignment);
            }
        }
    }
}
