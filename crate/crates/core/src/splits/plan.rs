use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SplitError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Val,
    Test,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Val => "val",
            Role::Test => "test",
        }
    }
}

/// Where a clip goes: a fixed role or a cross-validation fold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Assignment {
    Role(Role),
    Fold(usize),
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Assignment::Role(r) => f.write_str(r.as_str()),
            Assignment::Fold(i) => write!(f, "fold{i}"),
        }
    }
}

impl FromStr for Assignment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Assignment::Role(Role::Train)),
            "val" => Ok(Assignment::Role(Role::Val)),
            "test" => Ok(Assignment::Role(Role::Test)),
            _ => s
                .strip_prefix("fold")
                .unwrap_or(s)
                .parse()
                .map(Assignment::Fold)
                .map_err(|_| format!("unknown assignment {s:?}")),
        }
    }
}

/// How a plan was produced.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitStrategy {
    StratifiedKfold {
        k: usize,
        seed: u64,
    },
    SignerHoldout {
        test_signers: Vec<String>,
        #[serde(default)]
        val_signers: Vec<String>,
    },
    /// Fixed signer-held-out test (and optional validation) set, with the
    /// remaining clips dealt into stratified folds.
    Composite {
        test_signers: Vec<String>,
        #[serde(default)]
        val_signers: Vec<String>,
        k: usize,
        seed: u64,
    },
}

impl SplitStrategy {
    pub fn holds_out_signers(&self) -> bool {
        !matches!(self, SplitStrategy::StratifiedKfold { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanEntry {
    pub clip_id: String,
    pub assignment: Assignment,
    pub signer_id: String,
    pub class_index: usize,
}

/// Assignment of every manifest clip, in manifest order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    pub strategy: SplitStrategy,
    pub entries: Vec<PlanEntry>,
}

fn ids(entries: Vec<&PlanEntry>) -> Vec<&str> {
    entries.into_iter().map(|e| e.clip_id.as_str()).collect()
}

const STRATEGY_PREFIX: &str = "# strategy ";
const HEADER: &str = "clip_id,assignment,signer_id,class_index";

impl SplitPlan {
    pub fn assignment_of(&self, clip_id: &str) -> Option<Assignment> {
        self.entries
            .iter()
            .find(|e| e.clip_id == clip_id)
            .map(|e| e.assignment)
    }

    pub fn clips(&self, role: Role) -> Vec<&str> {
        self.with(Assignment::Role(role))
    }

    pub fn fold(&self, i: usize) -> Vec<&str> {
        self.with(Assignment::Fold(i))
    }

    fn with(&self, a: Assignment) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.assignment == a)
            .map(|e| e.clip_id.as_str())
            .collect()
    }

    pub fn num_folds(&self) -> usize {
        match self.strategy {
            SplitStrategy::StratifiedKfold { k, .. } | SplitStrategy::Composite { k, .. } => k,
            SplitStrategy::SignerHoldout { .. } => 0,
        }
    }

    /// `(training clips, held-out clips)` for cross-validation round `i`.
    pub fn cv_fold(&self, i: usize) -> Option<(Vec<&str>, Vec<&str>)> {
        if i >= self.num_folds() {
            return None;
        }
        let (held, train) = self
            .entries
            .iter()
            .filter(|e| matches!(e.assignment, Assignment::Fold(_)))
            .partition::<Vec<_>, _>(|e| e.assignment == Assignment::Fold(i));
        Some((ids(train), ids(held)))
    }

    /// Plan file: a strategy comment, a header, then one
    /// `clip_id,assignment,signer_id,class_index` line per clip.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(STRATEGY_PREFIX);
        out.push_str(&serde_json::to_string(&self.strategy).expect("strategy serializes"));
        out.push('\n');
        out.push_str(HEADER);
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.clip_id, e.assignment, e.signer_id, e.class_index
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, SplitError> {
        let err = |line: usize, message: String| SplitError::Parse { line, message };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let strategy = match lines.next() {
            Some((n, l)) => {
                let json = l
                    .strip_prefix(STRATEGY_PREFIX)
                    .ok_or_else(|| err(n, "missing strategy line".into()))?;
                serde_json::from_str(json).map_err(|e| err(n, e.to_string()))?
            }
            None => return Err(err(1, "empty plan".into())),
        };
        match lines.next() {
            Some((_, HEADER)) => {}
            _ => return Err(err(2, format!("expected header {HEADER:?}"))),
        }
        let mut entries = Vec::new();
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let [clip_id, assignment, signer_id, class_index] = fields[..] else {
                return Err(err(n, format!("expected 4 fields, found {}", fields.len())));
            };
            entries.push(PlanEntry {
                clip_id: clip_id.to_owned(),
                assignment: assignment.parse().map_err(|m| err(n, m))?,
                signer_id: signer_id.to_owned(),
                class_index: class_index
                    .parse()
                    .map_err(|_| err(n, format!("bad class index {class_index:?}")))?,
            });
        }
        Ok(Self { strategy, entries })
    }

    pub fn write(&self, path: &Path) -> Result<(), SplitError> {
        std::fs::write(path, self.to_text()).map_err(|source| SplitError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, SplitError> {
        let text = std::fs::read_to_string(path).map_err(|source| SplitError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }
}
