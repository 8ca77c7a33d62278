//! Compilation of action sequences into per-step cross-attention masks and
//! stack/buffer depths for specialized attention heads.
//!
//! Encoder rows are indexed `0..n`: row `i` holds word `i + 1` and row `n`
//! is the sentinel, which every specialized head may always attend to.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transition::{Action, ParserState, ROOT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HeadTarget {
    FullStack,
    FullBuffer,
    Top2Stack,
    Top2Buffer,
    Free,
}

impl HeadTarget {
    pub fn is_stack(self) -> bool {
        matches!(self, HeadTarget::FullStack | HeadTarget::Top2Stack)
    }

    pub fn is_buffer(self) -> bool {
        matches!(self, HeadTarget::FullBuffer | HeadTarget::Top2Buffer)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HeadSpec {
    pub target: HeadTarget,
    pub with_positions: bool,
}

impl HeadSpec {
    pub const FREE: HeadSpec = HeadSpec {
        target: HeadTarget::Free,
        with_positions: false,
    };

    pub fn new(target: HeadTarget) -> Self {
        HeadSpec {
            target,
            with_positions: false,
        }
    }

    pub fn with_positions(mut self) -> Self {
        self.with_positions = self.target != HeadTarget::Free;
        self
    }

    pub fn is_specialized(&self) -> bool {
        self.target != HeadTarget::Free
    }

    /// Whether this head adds depth embeddings to its keys.
    pub fn uses_positions(&self) -> bool {
        self.with_positions && self.is_specialized()
    }
}

impl fmt::Display for HeadSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.target {
            HeadTarget::FullStack => "stack",
            HeadTarget::FullBuffer => "buffer",
            HeadTarget::Top2Stack => "stack2",
            HeadTarget::Top2Buffer => "buffer2",
            HeadTarget::Free => "free",
        };
        if self.uses_positions() {
            write!(f, "{name}+pos")
        } else {
            write!(f, "{name}")
        }
    }
}

impl FromStr for HeadSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, pos) = match s.strip_suffix("+pos") {
            Some(n) => (n, true),
            None => (s, false),
        };
        let target = match name {
            "stack" => HeadTarget::FullStack,
            "buffer" => HeadTarget::FullBuffer,
            "stack2" => HeadTarget::Top2Stack,
            "buffer2" => HeadTarget::Top2Buffer,
            "free" => HeadTarget::Free,
            _ => return Err(Error::Config(format!("unknown head spec {s:?}"))),
        };
        if pos && target == HeadTarget::Free {
            return Err(Error::Config("free heads take no positions".into()));
        }
        let spec = HeadSpec::new(target);
        Ok(if pos { spec.with_positions() } else { spec })
    }
}

/// Parses a comma-separated head list such as `stack,buffer,free,free`.
pub fn parse_head_specs(s: &str) -> Result<Vec<HeadSpec>> {
    s.split(',').map(|p| p.trim().parse()).collect()
}

/// Head assignments of the named attention variants, for `heads` heads per
/// layer. `a` and `b` are unspecialized (b differs only in SHIFT decoration).
pub fn variant_specs(variant: char, heads: usize) -> Result<Vec<HeadSpec>> {
    use HeadTarget::*;
    let special: Vec<HeadSpec> = match variant {
        'a' | 'b' => vec![],
        'c' => vec![HeadSpec::new(FullStack), HeadSpec::new(FullBuffer)],
        'd' => vec![
            HeadSpec::new(FullStack).with_positions(),
            HeadSpec::new(FullBuffer).with_positions(),
        ],
        'e' => vec![HeadSpec::new(FullBuffer)],
        'f' => vec![HeadSpec::new(FullStack)],
        'g' => vec![HeadSpec::new(Top2Buffer)],
        'h' => vec![HeadSpec::new(Top2Stack)],
        _ => return Err(Error::Config(format!("unknown variant {variant:?}"))),
    };
    if special.len() > heads {
        return Err(Error::Config(format!(
            "variant {variant} needs {} heads, have {heads}",
            special.len()
        )));
    }
    let mut specs = special;
    specs.resize(heads, HeadSpec::FREE);
    Ok(specs)
}

/// Word positions a target covers, top of stack or front of buffer first.
/// The root token is never a member.
pub fn membership(state: &ParserState, target: HeadTarget) -> Vec<usize> {
    let mut words: Vec<usize> = match target {
        HeadTarget::FullStack | HeadTarget::Top2Stack => {
            state.stack().iter().rev().copied().filter(|&i| i != ROOT).collect()
        }
        HeadTarget::FullBuffer | HeadTarget::Top2Buffer => state.buffer().to_vec(),
        HeadTarget::Free => Vec::new(),
    };
    if matches!(target, HeadTarget::Top2Stack | HeadTarget::Top2Buffer) {
        words.truncate(2);
    }
    words
}

/// Mask and depths of one specialized head at one step, over encoder rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadMask {
    pub permitted: Vec<bool>,
    pub depth: Vec<Option<usize>>,
}

impl HeadMask {
    /// Mask over `n_words + 1` rows for the given membership order.
    pub fn from_members(n_words: usize, members: &[usize]) -> Self {
        let mut permitted = vec![false; n_words + 1];
        let mut depth = vec![None; n_words + 1];
        for (d, &w) in members.iter().enumerate() {
            permitted[w - 1] = true;
            depth[w - 1] = Some(d);
        }
        permitted[n_words] = true;
        HeadMask { permitted, depth }
    }

    pub fn sentinel(&self) -> usize {
        self.permitted.len() - 1
    }

    /// Permitted rows with their depth (`None` for the sentinel).
    pub fn entries(&self) -> impl Iterator<Item = (usize, Option<usize>)> + '_ {
        self.permitted
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .map(|(r, _)| (r, self.depth[r]))
    }
}

/// Masks for every step of an action sequence. `None` marks a free head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionPlan {
    n_words: usize,
    specs: Vec<HeadSpec>,
    steps: Vec<Vec<Option<HeadMask>>>,
}

impl AttentionPlan {
    pub fn n_words(&self) -> usize {
        self.n_words
    }

    pub fn specs(&self) -> &[HeadSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Mask of `head` at 0-based step `t`, i.e. before predicting action `t`.
    pub fn mask(&self, t: usize, head: usize) -> Option<&HeadMask> {
        self.steps[t][head].as_ref()
    }

    pub fn mask_mut(&mut self, t: usize, head: usize) -> Option<&mut HeadMask> {
        self.steps[t][head].as_mut()
    }

    pub fn step(&self, t: usize) -> &[Option<HeadMask>] {
        &self.steps[t]
    }

    /// Debug rendering: for every step and specialized head a line of `#`
    /// (permitted) and `.` (excluded) over the rows, then a depth line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (t, heads) in self.steps.iter().enumerate() {
            for (h, mask) in heads.iter().enumerate() {
                let Some(mask) = mask else { continue };
                out.push_str(&format!("step {} head {} {}\n", t + 1, h, self.specs[h]));
                out.extend(mask.permitted.iter().map(|&p| if p { '#' } else { '.' }));
                out.push('\n');
                out.extend(mask.depth.iter().enumerate().map(|(r, d)| match d {
                    _ if r == mask.sentinel() => '*',
                    Some(d) => std::char::from_digit(*d as u32, 36).unwrap_or('+'),
                    None => '.',
                }));
                out.push('\n');
            }
        }
        out
    }
}

/// Masks for a single parser state, in head order.
pub fn step_masks(state: &ParserState, specs: &[HeadSpec]) -> Vec<Option<HeadMask>> {
    let n = state.n_words();
    let mut cache: Vec<(HeadTarget, HeadMask)> = Vec::new();
    specs
        .iter()
        .map(|spec| {
            if !spec.is_specialized() {
                return None;
            }
            if let Some((_, m)) = cache.iter().find(|(t, _)| *t == spec.target) {
                return Some(m.clone());
            }
            let mask = HeadMask::from_members(n, &membership(state, spec.target));
            cache.push((spec.target, mask.clone()));
            Some(mask)
        })
        .collect()
}

/// Replays `actions` and records the masks in force before each action.
pub fn compute_plan(n_words: usize, actions: &[Action], specs: &[HeadSpec]) -> Result<AttentionPlan> {
    let mut state = ParserState::new(n_words)?;
    let mut steps = Vec::with_capacity(actions.len());
    for (t, action) in actions.iter().enumerate() {
        steps.push(step_masks(&state, specs));
        if *action == Action::End && t + 1 != actions.len() {
            return Err(Error::InvalidTransition {
                action: actions[t + 1].to_string(),
                step: t + 1,
                reason: "action after end of sequence".into(),
            });
        }
        state = state.apply(action)?;
    }
    Ok(AttentionPlan {
        n_words,
        specs: specs.to_vec(),
        steps,
    })
}

/// First point where a plan disagrees with an independent replay.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanDivergence {
    pub step: usize,
    pub head: usize,
    pub detail: String,
}

impl fmt::Display for PlanDivergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {} head {}: {}", self.step + 1, self.head, self.detail)
    }
}

/// Checks `plan` against a replay that shares no code with [`compute_plan`].
pub fn verify_plan(
    plan: &AttentionPlan,
    n_words: usize,
    actions: &[Action],
    specs: &[HeadSpec],
) -> std::result::Result<(), PlanDivergence> {
    let diverge = |step, head, detail: String| PlanDivergence { step, head, detail };
    if plan.n_words != n_words || plan.specs != specs {
        return Err(diverge(0, 0, "plan built for a different sentence or heads".into()));
    }
    if plan.steps.len() != actions.len() {
        return Err(diverge(
            0,
            0,
            format!("{} steps for {} actions", plan.steps.len(), actions.len()),
        ));
    }

    // Stack top and buffer front are both kept at the end of their vectors.
    let mut stack: Vec<usize> = vec![ROOT];
    let mut buffer: Vec<usize> = (1..=n_words).rev().collect();
    for (t, action) in actions.iter().enumerate() {
        for (h, spec) in specs.iter().enumerate() {
            let got = &plan.steps[t][h];
            let expected: Option<Vec<usize>> = match spec.target {
                HeadTarget::Free => None,
                HeadTarget::FullStack => Some(stack.iter().rev().filter(|&&w| w > 0).copied().collect()),
                HeadTarget::Top2Stack => Some(stack.iter().rev().filter(|&&w| w > 0).take(2).copied().collect()),
                HeadTarget::FullBuffer => Some(buffer.iter().rev().copied().collect()),
                HeadTarget::Top2Buffer => Some(buffer.iter().rev().take(2).copied().collect()),
            };
            match (expected, got) {
                (None, None) => {}
                (None, Some(_)) => return Err(diverge(t, h, "free head has a mask".into())),
                (Some(_), None) => return Err(diverge(t, h, "specialized head has no mask".into())),
                (Some(words), Some(mask)) => {
                    if mask.permitted.len() != n_words + 1 || mask.depth.len() != n_words + 1 {
                        return Err(diverge(t, h, "mask has the wrong width".into()));
                    }
                    if !mask.permitted[n_words] || mask.depth[n_words].is_some() {
                        return Err(diverge(t, h, "sentinel row is not plain-permitted".into()));
                    }
                    for row in 0..n_words {
                        let want = words.iter().position(|&w| w == row + 1);
                        if mask.permitted[row] != want.is_some() {
                            return Err(diverge(
                                t,
                                h,
                                format!(
                                    "row {row} permitted={} expected {}",
                                    mask.permitted[row],
                                    want.is_some()
                                ),
                            ));
                        }
                        if mask.depth[row] != want {
                            return Err(diverge(
                                t,
                                h,
                                format!("row {row} depth {:?} expected {:?}", mask.depth[row], want),
                            ));
                        }
                    }
                }
            }
        }

        let n = stack.len();
        let fail = |what: &str| diverge(t, 0, format!("{action} cannot be replayed: {what}"));
        match action {
            Action::Shift(_) => stack.push(buffer.pop().ok_or_else(|| fail("empty buffer"))?),
            Action::LeftArc(_) => {
                if n < 3 {
                    return Err(fail("short stack"));
                }
                stack.remove(n - 2);
            }
            Action::RightArc(_) | Action::Reduce => {
                if n < 2 {
                    return Err(fail("short stack"));
                }
                stack.pop();
            }
            Action::Swap => {
                if n < 3 {
                    return Err(fail("short stack"));
                }
                buffer.push(stack.remove(n - 2));
            }
            Action::End => {}
        }
    }
    Ok(())
}
