//! Three-level conditional question catalog and per-image query sessions.
//!
//! Level-1 questions probe one hazard category each. A follow-up question
//! becomes pending once its parent has been answered with the follow-up's
//! trigger value (Yes unless the catalog says otherwise).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEFAULT_CATALOG: &str = include_str!("../data/default_catalog.json");

pub const MAX_LEVEL: u8 = 3;

/// Level-1 hazard classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardCategory {
    Stairs,
    Crossings,
    Construction,
    Obstacles,
    Crowding,
    Vehicles,
    Surface,
    #[serde(alias = "non-sidewalk", alias = "nonsidewalk")]
    NonSidewalk,
}

impl HazardCategory {
    pub const ALL: [HazardCategory; 8] = [
        HazardCategory::Stairs,
        HazardCategory::Crossings,
        HazardCategory::Construction,
        HazardCategory::Obstacles,
        HazardCategory::Crowding,
        HazardCategory::Vehicles,
        HazardCategory::Surface,
        HazardCategory::NonSidewalk,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HazardCategory::Stairs => "stairs",
            HazardCategory::Crossings => "crossings",
            HazardCategory::Construction => "construction",
            HazardCategory::Obstacles => "obstacles",
            HazardCategory::Crowding => "crowding",
            HazardCategory::Vehicles => "vehicles",
            HazardCategory::Surface => "surface",
            HazardCategory::NonSidewalk => "non_sidewalk",
        }
    }

    /// Human-readable label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            HazardCategory::Stairs => "Stairs",
            HazardCategory::Crossings => "Crossings",
            HazardCategory::Construction => "Construction",
            HazardCategory::Obstacles => "Obstacles",
            HazardCategory::Crowding => "Crowding",
            HazardCategory::Vehicles => "Vehicles",
            HazardCategory::Surface => "Surface",
            HazardCategory::NonSidewalk => "Non-Sidewalk",
        }
    }
}

impl fmt::Display for HazardCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HazardCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let folded = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        HazardCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == folded || (folded == "nonsidewalk" && *c == HazardCategory::NonSidewalk))
            .ok_or_else(|| format!("unknown hazard category `{s}`"))
    }
}

/// Yes, No, or an explicit skip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryAnswer {
    Yes,
    No,
    #[default]
    Unanswered,
}

impl BinaryAnswer {
    pub fn is_answered(self) -> bool {
        !matches!(self, BinaryAnswer::Unanswered)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BinaryAnswer::Yes => "yes",
            BinaryAnswer::No => "no",
            BinaryAnswer::Unanswered => "unanswered",
        }
    }
}

impl fmt::Display for BinaryAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_trigger() -> BinaryAnswer {
    BinaryAnswer::Yes
}

fn is_default_trigger(a: &BinaryAnswer) -> bool {
    *a == BinaryAnswer::Yes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub category: HazardCategory,
    pub level: u8,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default = "default_trigger", skip_serializing_if = "is_default_trigger")]
    pub trigger: BinaryAnswer,
}

#[derive(Debug, Error, PartialEq)]
pub enum CatalogError {
    #[error("catalog is not valid JSON: {0}")]
    Parse(String),
    #[error("duplicate question id `{0}`")]
    DuplicateId(String),
    #[error("question `{id}` references unknown parent `{parent}`")]
    UnresolvedParent { id: String, parent: String },
    #[error("question `{id}` has level {level}; levels must be between 1 and {MAX_LEVEL}")]
    DepthExceeded { id: String, level: u8 },
    #[error("level-1 question `{0}` must not have a parent")]
    RootWithParent(String),
    #[error("level-{level} question `{id}` has no parent")]
    MissingParent { id: String, level: u8 },
    #[error("question `{id}` (level {level}) has parent `{parent}` at level {parent_level}")]
    LevelGap {
        id: String,
        level: u8,
        parent: String,
        parent_level: u8,
    },
    #[error("question `{id}` is in category {category} but its parent `{parent}` is not")]
    CategoryMismatch {
        id: String,
        parent: String,
        category: HazardCategory,
    },
    #[error("cyclic parent chain through `{0}`")]
    Cycle(String),
    #[error("no level-1 question for category {0}")]
    MissingLevelOne(HazardCategory),
    #[error("more than one level-1 question for category {0}")]
    DuplicateLevelOne(HazardCategory),
    #[error("a trigger of `unanswered` on `{0}` can never unlock the question")]
    UnreachableTrigger(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct CatalogFile {
    version: String,
    questions: Vec<Question>,
}

/// An immutable, validated question hierarchy.
#[derive(Debug, Clone)]
pub struct QuestionCatalog {
    version: String,
    questions: Vec<Question>,
    index: HashMap<String, usize>,
}

impl QuestionCatalog {
    /// The catalog shipped with the crate.
    pub fn default_catalog() -> Self {
        Self::from_json(DEFAULT_CATALOG).expect("bundled catalog is valid")
    }

    pub fn from_json(source: &str) -> Result<Self, CatalogError> {
        let file: CatalogFile = serde_json::from_str(source).map_err(|e| CatalogError::Parse(e.to_string()))?;
        Self::new(file.version, file.questions)
    }

    pub fn new(version: impl Into<String>, questions: Vec<Question>) -> Result<Self, CatalogError> {
        let mut index = HashMap::with_capacity(questions.len());
        for (pos, q) in questions.iter().enumerate() {
            if index.insert(q.id.clone(), pos).is_some() {
                return Err(CatalogError::DuplicateId(q.id.clone()));
            }
        }

        for q in &questions {
            if q.level == 0 || q.level > MAX_LEVEL {
                return Err(CatalogError::DepthExceeded {
                    id: q.id.clone(),
                    level: q.level,
                });
            }
            if let Some(parent) = &q.parent {
                if !index.contains_key(parent) {
                    return Err(CatalogError::UnresolvedParent {
                        id: q.id.clone(),
                        parent: parent.clone(),
                    });
                }
            }
        }

        // Chains are walked before the level checks so that a cycle is
        // reported as such rather than as a level gap.
        for q in &questions {
            let mut seen = HashSet::new();
            let mut cursor = Some(q);
            while let Some(node) = cursor {
                if !seen.insert(node.id.as_str()) {
                    return Err(CatalogError::Cycle(q.id.clone()));
                }
                cursor = node.parent.as_ref().map(|p| &questions[index[p]]);
            }
        }

        for q in &questions {
            match (&q.parent, q.level) {
                (Some(_), 1) => return Err(CatalogError::RootWithParent(q.id.clone())),
                (None, 1) => {}
                (None, level) => {
                    return Err(CatalogError::MissingParent {
                        id: q.id.clone(),
                        level,
                    })
                }
                (Some(parent_id), level) => {
                    let parent = &questions[index[parent_id]];
                    if parent.level + 1 != level {
                        return Err(CatalogError::LevelGap {
                            id: q.id.clone(),
                            level,
                            parent: parent_id.clone(),
                            parent_level: parent.level,
                        });
                    }
                    if parent.category != q.category {
                        return Err(CatalogError::CategoryMismatch {
                            id: q.id.clone(),
                            parent: parent_id.clone(),
                            category: q.category,
                        });
                    }
                    if q.trigger == BinaryAnswer::Unanswered {
                        return Err(CatalogError::UnreachableTrigger(q.id.clone()));
                    }
                }
            }
        }

        for category in HazardCategory::ALL {
            let roots = questions
                .iter()
                .filter(|q| q.level == 1 && q.category == category)
                .count();
            match roots {
                0 => return Err(CatalogError::MissingLevelOne(category)),
                1 => {}
                _ => return Err(CatalogError::DuplicateLevelOne(category)),
            }
        }

        Ok(Self {
            version: version.into(),
            questions,
            index,
        })
    }

    pub fn to_json(&self) -> String {
        let file = CatalogFile {
            version: self.version.clone(),
            questions: self.questions.clone(),
        };
        serde_json::to_string_pretty(&file).expect("catalog serializes")
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Question> {
        self.index.get(id).map(|&i| &self.questions[i])
    }

    pub fn level_one(&self, category: HazardCategory) -> &Question {
        self.questions
            .iter()
            .find(|q| q.level == 1 && q.category == category)
            .expect("validated catalog has one level-1 question per category")
    }

    pub fn level_one_questions(&self) -> impl Iterator<Item = &Question> {
        self.questions.iter().filter(|q| q.level == 1)
    }

    /// Starts an empty session bound to this catalog's version.
    pub fn new_session(&self, image_id: impl Into<String>) -> QuerySession {
        QuerySession {
            image_id: image_id.into(),
            catalog_version: self.version.clone(),
            answers: BTreeMap::new(),
        }
    }

    fn is_unlocked(&self, q: &Question, session: &QuerySession) -> bool {
        match &q.parent {
            None => true,
            Some(parent) => session.answer(parent) == Some(q.trigger),
        }
    }

    /// Pending question ids in catalog order.
    pub fn next_questions<'a>(&'a self, session: &QuerySession) -> Vec<&'a str> {
        self.questions
            .iter()
            .filter(|q| !session.answers.contains_key(&q.id) && self.is_unlocked(q, session))
            .map(|q| q.id.as_str())
            .collect()
    }

    pub fn is_complete(&self, session: &QuerySession) -> bool {
        self.next_questions(session).is_empty()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SessionError {
    #[error("session uses catalog `{session}` but the catalog is `{catalog}`")]
    VersionMismatch { session: String, catalog: String },
    #[error("unknown question id `{0}`")]
    UnknownQuestion(String),
    #[error("question `{0}` is locked: its parent has not been answered with its trigger")]
    Locked(String),
    #[error("question `{qid}` is already answered `{existing}`")]
    AlreadyAnswered { qid: String, existing: BinaryAnswer },
    #[error("session is not valid JSON: {0}")]
    Parse(String),
}

/// Per-image answer state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySession {
    pub image_id: String,
    pub catalog_version: String,
    #[serde(default)]
    pub answers: BTreeMap<String, BinaryAnswer>,
}

impl QuerySession {
    pub fn from_json(source: &str) -> Result<Self, SessionError> {
        serde_json::from_str(source).map_err(|e| SessionError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("session serializes")
    }

    pub fn answer(&self, qid: &str) -> Option<BinaryAnswer> {
        self.answers.get(qid).copied()
    }

    fn check_version(&self, catalog: &QuestionCatalog) -> Result<(), SessionError> {
        if self.catalog_version != catalog.version() {
            return Err(SessionError::VersionMismatch {
                session: self.catalog_version.clone(),
                catalog: catalog.version().to_string(),
            });
        }
        Ok(())
    }

    /// Returns a new session with `answer` stored for `qid`.
    ///
    /// Yes/No is accepted only for pending questions. Unanswered may be
    /// recorded for any known question to mark it skipped.
    pub fn record_answer(
        &self,
        catalog: &QuestionCatalog,
        qid: &str,
        answer: BinaryAnswer,
    ) -> Result<QuerySession, SessionError> {
        self.check_version(catalog)?;
        let question = catalog
            .get(qid)
            .ok_or_else(|| SessionError::UnknownQuestion(qid.to_string()))?;
        if let Some(existing) = self.answer(qid) {
            if existing == answer {
                return Ok(self.clone());
            }
            return Err(SessionError::AlreadyAnswered {
                qid: qid.to_string(),
                existing,
            });
        }
        if answer.is_answered() && !catalog.is_unlocked(question, self) {
            return Err(SessionError::Locked(qid.to_string()));
        }
        let mut next = self.clone();
        next.answers.insert(qid.to_string(), answer);
        Ok(next)
    }

    /// Checks a session loaded from disk: version, known ids, and that every
    /// Yes/No follow-up answer has its parent answered with the trigger.
    pub fn validate(&self, catalog: &QuestionCatalog) -> Result<(), SessionError> {
        self.check_version(catalog)?;
        for (qid, answer) in &self.answers {
            let question = catalog
                .get(qid)
                .ok_or_else(|| SessionError::UnknownQuestion(qid.clone()))?;
            if answer.is_answered() && !catalog.is_unlocked(question, self) {
                return Err(SessionError::Locked(qid.clone()));
            }
        }
        Ok(())
    }

    /// Yes/No answers in catalog order, for event labels.
    pub fn answered_labels(&self, catalog: &QuestionCatalog) -> Vec<(String, BinaryAnswer)> {
        catalog
            .questions()
            .iter()
            .filter_map(|q| {
                self.answer(&q.id)
                    .filter(|a| a.is_answered())
                    .map(|a| (q.id.clone(), a))
            })
            .collect()
    }
}
