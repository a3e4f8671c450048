//! Domain model for instructional plans, dialogues, and turns.
//!
//! A plan is an ordered list of text actions, each paired with the video
//! moment (frame interval) demonstrating it. Dialogues are turn sequences
//! linked to one plan. Everything is immutable after load and safe to share
//! across evaluation workers.
//!
//! Corpus files are JSON lines, one record per line: a plans file and a
//! dialogues file (see [`load_corpus`] / [`save_corpus`]).

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PLANS_FILE: &str = "plans.jsonl";
pub const DIALOGUES_FILE: &str = "dialogues.jsonl";

/// A contiguous video moment `[start_frame, end_frame]`, inclusive on both
/// ends. Frame indices are 0-based throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameInterval {
    pub start_frame: u32,
    pub end_frame: u32,
}

impl FrameInterval {
    pub fn new(start_frame: u32, end_frame: u32) -> Result<Self> {
        let iv = FrameInterval {
            start_frame,
            end_frame,
        };
        iv.validate("interval")?;
        Ok(iv)
    }

    pub fn validate(&self, entity: &str) -> Result<()> {
        if self.start_frame > self.end_frame {
            return Err(Error::invariant(
                entity,
                format!(
                    "end_frame < start_frame ({} < {})",
                    self.end_frame, self.start_frame
                ),
            ));
        }
        Ok(())
    }

    /// Inclusive frame count.
    pub fn len(&self) -> u64 {
        u64::from(self.end_frame) - u64::from(self.start_frame) + 1
    }

    pub fn is_empty(&self) -> bool {
        false // a valid interval always spans at least one frame
    }

    pub fn contains(&self, frame: u32) -> bool {
        self.start_frame <= frame && frame <= self.end_frame
    }

    pub fn overlaps(&self, other: &FrameInterval) -> bool {
        self.start_frame <= other.end_frame && other.start_frame <= self.end_frame
    }
}

impl fmt::Display for FrameInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.start_frame, self.end_frame)
    }
}

/// One plan step: 1-based index, action text, and its video moment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub index: u32,
    pub text: String,
    #[serde(flatten)]
    pub moment: FrameInterval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Cooking,
    Diy,
    Other,
}

/// An instructional plan: ordered actions with their video moments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub plan_id: String,
    pub title: String,
    pub domain_tag: DomainTag,
    pub actions: Vec<Action>,
}

impl Plan {
    /// Checks all plan invariants: non-empty contiguous 1-based actions,
    /// non-empty action text, valid moments, and monotone moment starts.
    /// Overlapping moments are legal (see [`lint_plan`]).
    pub fn validate(&self) -> Result<()> {
        if self.actions.is_empty() {
            return Err(Error::invariant(&self.plan_id, "actions list is empty"));
        }
        for (i, action) in self.actions.iter().enumerate() {
            let entity = format!("{}/action {}", self.plan_id, action.index);
            if action.index as usize != i + 1 {
                return Err(Error::invariant(
                    &entity,
                    format!("action indices must be 1..m contiguous (position {})", i),
                ));
            }
            if action.text.trim().is_empty() {
                return Err(Error::invariant(&entity, "action text is empty"));
            }
            action.moment.validate(&entity)?;
        }
        for pair in self.actions.windows(2) {
            if pair[0].moment.start_frame > pair[1].moment.start_frame {
                return Err(Error::invariant(
                    format!("{}/action {}", self.plan_id, pair[1].index),
                    "moment starts must be non-decreasing across actions",
                ));
            }
        }
        Ok(())
    }

    /// Looks up an action by its 1-based index.
    pub fn action(&self, index: u32) -> Option<&Action> {
        if index == 0 {
            return None;
        }
        self.actions.get(index as usize - 1)
    }
}

/// Warnings for accepted-but-suspect data, e.g. overlapping moments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LintWarning {
    pub entity: String,
    pub message: String,
}

/// Flags adjacent actions whose moments overlap. Overlap is accepted by
/// `validate` (real videos have fuzzy boundaries) but worth surfacing.
pub fn lint_plan(plan: &Plan) -> Vec<LintWarning> {
    let mut warnings = Vec::new();
    for pair in plan.actions.windows(2) {
        if pair[0].moment.overlaps(&pair[1].moment) {
            warnings.push(LintWarning {
                entity: format!("{}/action {}", plan.plan_id, pair[1].index),
                message: format!(
                    "moment {} overlaps previous action's moment {}",
                    pair[1].moment, pair[0].moment
                ),
            });
        }
    }
    warnings
}

/// The four turn kinds: text-only answer generation, plan-aware VQA,
/// visually-informed step generation, and video moment retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TurnType {
    #[serde(rename = "pgag")]
    Pgag,
    #[serde(rename = "pvqa")]
    Pvqa,
    #[serde(rename = "vsg")]
    Vsg,
    #[serde(rename = "cvmr")]
    Cvmr,
}

impl TurnType {
    /// Turn kinds carrying a user image.
    pub fn is_multimodal(self) -> bool {
        matches!(self, TurnType::Pvqa | TurnType::Vsg | TurnType::Cvmr)
    }
}

/// A user-provided image: either a frame of the plan's video or an
/// external image id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageRef {
    Frame(u32),
    External(String),
}

/// One dialogue turn: user input, system response, optional image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub user_text: String,
    pub system_text: String,
    pub image_ref: Option<ImageRef>,
    pub turn_type: TurnType,
    pub next_step_intent: bool,
    pub current_action_index: u32,
}

impl Turn {
    pub fn validate(&self, entity: &str) -> Result<()> {
        match self.turn_type {
            TurnType::Pvqa | TurnType::Vsg => {
                if self.image_ref.is_none() {
                    return Err(Error::invariant(
                        entity,
                        "pvqa/vsg turns require an image_ref",
                    ));
                }
            }
            TurnType::Pgag => {
                if self.image_ref.is_some() {
                    return Err(Error::invariant(entity, "pgag turns must not carry an image"));
                }
            }
            TurnType::Cvmr => {}
        }
        if self.current_action_index == 0 {
            return Err(Error::invariant(
                entity,
                "current_action_index must be positive (1-based)",
            ));
        }
        Ok(())
    }
}

/// A dialogue: plan-linked ordered turn sequence. Turn indices are
/// positional (0-based), hence contiguous by construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub plan_id: String,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    /// Validates turn-local invariants plus action references against the
    /// owning plan: every cvmr/vsg/pvqa turn must name an existing action.
    pub fn validate(&self, plan: &Plan) -> Result<()> {
        if self.plan_id != plan.plan_id {
            return Err(Error::invariant(
                &self.dialogue_id,
                format!("dialogue references plan {}, got {}", self.plan_id, plan.plan_id),
            ));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            let entity = format!("{}/turn {}", self.dialogue_id, i);
            turn.validate(&entity)?;
            if turn.turn_type.is_multimodal() && plan.action(turn.current_action_index).is_none() {
                return Err(Error::invariant(
                    &entity,
                    format!(
                        "action index {} does not exist in plan {} ({} actions)",
                        turn.current_action_index,
                        plan.plan_id,
                        plan.actions.len()
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Count of turns carrying an image task (pvqa/vsg/cvmr); the curation key.
    pub fn multimodal_turn_count(&self) -> usize {
        self.turns
            .iter()
            .filter(|t| t.turn_type.is_multimodal())
            .count()
    }
}

/// The turns preceding a target turn, capped at `w` (default 4).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextWindow<'a> {
    pub turns: Vec<&'a Turn>,
    pub w: usize,
}

pub const DEFAULT_CONTEXT_TURNS: usize = 4;

/// Returns the `min(w, target_turn_index)` turns immediately preceding the
/// target, in order. The target itself is never included.
pub fn context_window(
    dialogue: &Dialogue,
    target_turn_index: usize,
    w: usize,
) -> Result<ContextWindow<'_>> {
    if target_turn_index >= dialogue.turns.len() {
        return Err(Error::InvalidInput(format!(
            "turn index {} out of range for {} ({} turns)",
            target_turn_index,
            dialogue.dialogue_id,
            dialogue.turns.len()
        )));
    }
    let lo = target_turn_index.saturating_sub(w);
    Ok(ContextWindow {
        turns: dialogue.turns[lo..target_turn_index].iter().collect(),
        w,
    })
}

/// A fully validated corpus: each plan with its dialogues, in file order.
pub type Corpus = Vec<(Plan, Vec<Dialogue>)>;

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| {
            Error::parse(path.display().to_string(), lineno + 1, e.to_string())
        })?;
        out.push(record);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::InvalidInput(format!("serialize failed: {e}")))?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Loads and validates `plans.jsonl` + `dialogues.jsonl` from a directory.
///
/// Every invariant is checked up front: malformed lines fail with file and
/// line number, invariant violations name the entity and rule, and every
/// dialogue must resolve to exactly one plan.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let plans: Vec<Plan> = read_jsonl(&dir.join(PLANS_FILE))?;
    let dialogues: Vec<Dialogue> = read_jsonl(&dir.join(DIALOGUES_FILE))?;

    let mut by_plan: HashMap<&str, usize> = HashMap::new();
    for (i, plan) in plans.iter().enumerate() {
        plan.validate()?;
        if by_plan.insert(plan.plan_id.as_str(), i).is_some() {
            return Err(Error::invariant(&plan.plan_id, "duplicate plan_id"));
        }
    }

    let mut grouped: Vec<Vec<Dialogue>> = vec![Vec::new(); plans.len()];
    for dialogue in dialogues {
        let Some(&idx) = by_plan.get(dialogue.plan_id.as_str()) else {
            return Err(Error::invariant(
                &dialogue.dialogue_id,
                format!("plan_id {} not found in corpus", dialogue.plan_id),
            ));
        };
        dialogue.validate(&plans[idx])?;
        grouped[idx].push(dialogue);
    }

    Ok(plans.into_iter().zip(grouped).collect())
}

/// Writes a corpus back out in the same two-file format.
pub fn save_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let plans: Vec<&Plan> = corpus.iter().map(|(p, _)| p).collect();
    let dialogues: Vec<&Dialogue> = corpus.iter().flat_map(|(_, ds)| ds.iter()).collect();
    write_jsonl(&dir.join(PLANS_FILE), &plans)?;
    write_jsonl(&dir.join(DIALOGUES_FILE), &dialogues)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_plan(plan_id: &str) -> Plan {
        Plan {
            plan_id: plan_id.to_string(),
            title: "Flatbread".to_string(),
            domain_tag: DomainTag::Cooking,
            actions: vec![
                Action {
                    index: 1,
                    text: "Mix flour and water".to_string(),
                    moment: FrameInterval::new(0, 40).unwrap(),
                },
                Action {
                    index: 2,
                    text: "Knead the dough".to_string(),
                    moment: FrameInterval::new(41, 90).unwrap(),
                },
                Action {
                    index: 3,
                    text: "Bake on a hot pan".to_string(),
                    moment: FrameInterval::new(91, 140).unwrap(),
                },
            ],
        }
    }

    fn turn(turn_type: TurnType, action: u32, next: bool) -> Turn {
        let image_ref = match turn_type {
            TurnType::Pgag => None,
            _ => Some(ImageRef::Frame(12)),
        };
        Turn {
            user_text: "next".to_string(),
            system_text: "ok".to_string(),
            image_ref,
            turn_type,
            next_step_intent: next,
            current_action_index: action,
        }
    }

    fn sample_dialogue(plan_id: &str, id: &str, n_turns: usize) -> Dialogue {
        Dialogue {
            dialogue_id: id.to_string(),
            plan_id: plan_id.to_string(),
            turns: (0..n_turns)
                .map(|i| turn(TurnType::Pgag, (i % 3 + 1) as u32, i % 2 == 0))
                .collect(),
        }
    }

    #[test]
    fn interval_rejects_reversed_bounds() {
        let err = FrameInterval::new(9, 3).unwrap_err();
        assert!(matches!(err, Error::Invariant { .. }), "{err}");
    }

    #[test]
    fn plan_rejects_empty_actions() {
        let mut plan = sample_plan("p0");
        plan.actions.clear();
        let err = plan.validate().unwrap_err();
        assert!(err.to_string().contains("empty"));
    }

    #[test]
    fn plan_rejects_non_contiguous_indices() {
        let mut plan = sample_plan("p0");
        plan.actions[1].index = 5;
        assert!(plan.validate().is_err());
    }

    #[test]
    fn plan_rejects_decreasing_starts() {
        let mut plan = sample_plan("p0");
        plan.actions[2].moment = FrameInterval::new(10, 200).unwrap();
        assert!(plan.validate().is_err());
    }

    #[test]
    fn overlap_is_accepted_but_linted() {
        let mut plan = sample_plan("p0");
        plan.actions[1].moment = FrameInterval::new(30, 90).unwrap();
        plan.validate().unwrap();
        let warnings = lint_plan(&plan);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].entity.contains("action 2"));
    }

    #[test]
    fn pgag_turn_must_not_carry_image() {
        let mut t = turn(TurnType::Pgag, 1, false);
        t.image_ref = Some(ImageRef::External("img-1".to_string()));
        assert!(t.validate("d/turn 0").is_err());
    }

    #[test]
    fn pvqa_turn_requires_image() {
        let mut t = turn(TurnType::Pvqa, 1, false);
        t.image_ref = None;
        assert!(t.validate("d/turn 0").is_err());
    }

    #[test]
    fn dialogue_rejects_missing_action_reference() {
        let plan = sample_plan("p0");
        let mut d = sample_dialogue("p0", "d0", 2);
        d.turns[1] = turn(TurnType::Cvmr, 7, false);
        let err = d.validate(&plan).unwrap_err();
        assert!(err.to_string().contains("action index 7"));
    }

    #[test]
    fn context_window_at_start_is_empty() {
        let d = sample_dialogue("p0", "d0", 5);
        let win = context_window(&d, 0, 4).unwrap();
        assert!(win.turns.is_empty());
    }

    #[test]
    fn context_window_truncates_to_available() {
        let d = sample_dialogue("p0", "d0", 5);
        let win = context_window(&d, 2, 4).unwrap();
        assert_eq!(win.turns.len(), 2);
        assert!(std::ptr::eq(win.turns[0], &d.turns[0]));
        assert!(std::ptr::eq(win.turns[1], &d.turns[1]));
    }

    #[test]
    fn context_window_takes_last_w_predecessors() {
        // target 7, w 4 -> turns 3..6 inclusive
        let d = sample_dialogue("p0", "d0", 9);
        let win = context_window(&d, 7, 4).unwrap();
        assert_eq!(win.turns.len(), 4);
        for (offset, t) in win.turns.iter().enumerate() {
            assert!(std::ptr::eq(*t, &d.turns[3 + offset]));
        }
    }

    #[test]
    fn context_window_rejects_out_of_range() {
        let d = sample_dialogue("p0", "d0", 3);
        assert!(context_window(&d, 3, 4).is_err());
    }

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let corpus: Corpus = vec![
            (sample_plan("p0"), vec![sample_dialogue("p0", "d0", 4)]),
            (
                sample_plan("p1"),
                vec![
                    sample_dialogue("p1", "d1", 2),
                    sample_dialogue("p1", "d2", 6),
                ],
            ),
        ];
        save_corpus(dir.path(), &corpus).unwrap();
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(loaded, corpus);
    }

    #[test]
    fn corpus_rejects_invalid_interval_with_entity() {
        let dir = tempfile::tempdir().unwrap();
        let mut corpus: Corpus = vec![(sample_plan("p0"), vec![])];
        corpus[0].0.actions[1].moment.end_frame = 5; // end < start
        // bypass save-side validation: write the raw files directly
        save_corpus(dir.path(), &corpus).unwrap();
        let err = load_corpus(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("p0/action 2"), "{msg}");
    }

    #[test]
    fn corpus_rejects_unresolved_plan_id() {
        let dir = tempfile::tempdir().unwrap();
        let corpus: Corpus = vec![(sample_plan("p0"), vec![sample_dialogue("p9", "d0", 1)])];
        save_corpus(dir.path(), &corpus).unwrap();
        let err = load_corpus(dir.path()).unwrap_err();
        assert!(err.to_string().contains("p9"));
    }

    #[test]
    fn parse_error_carries_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(PLANS_FILE), "{\"plan_id\": 3}\n").unwrap();
        fs::write(dir.path().join(DIALOGUES_FILE), "").unwrap();
        let err = load_corpus(dir.path()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn image_ref_serializes_untagged() {
        let frame = ImageRef::Frame(17);
        let ext = ImageRef::External("ext-3".to_string());
        assert_eq!(serde_json::to_string(&frame).unwrap(), "17");
        assert_eq!(serde_json::to_string(&ext).unwrap(), "\"ext-3\"");
        let back: ImageRef = serde_json::from_str("17").unwrap();
        assert_eq!(back, frame);
    }
}
