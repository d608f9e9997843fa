//! The dialogue environment: turns agent questions into simulator queries,
//! maintains the agent-visible state and hands out rewards.
//!
//! The state vector is laid out as
//! `[current response (c) | moving average (c) | fingerprint (h) | p_NL | p_MCI | tau]`,
//! so its length is `2c + h + 3`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::catalog::{ActionMask, QuestionCatalog};
use crate::classifier::{label_for, ClassifierModel};
use crate::cohort::{Label, Turn};
use crate::error::{check_len, usage, Error, Result};
use crate::simulator::SimulatorModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Episode length cap `T` (agent questions, greeting excluded).
    pub max_turns: usize,
    /// A turn counts toward `tau` when either class probability reaches this.
    pub confidence_threshold: f64,
    pub step_penalty: f64,
    /// Added once per unit of `tau` on every non-terminal step.
    pub tau_penalty: f64,
    pub terminal_correct: f64,
    pub terminal_wrong: f64,
    /// Whether the greeting's response enters the moving average.
    pub include_greeting: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            max_turns: 35,
            confidence_threshold: 0.65,
            step_penalty: -10.0,
            tau_penalty: -10.0,
            terminal_correct: 1000.0,
            terminal_wrong: -500.0,
            include_greeting: true,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_turns == 0 {
            return Err(usage("max_turns must be at least 1"));
        }
        if !(self.confidence_threshold >= 0.5 && self.confidence_threshold < 1.0) {
            return Err(usage("confidence_threshold must lie in [0.5, 1)"));
        }
        Ok(())
    }

    /// The largest achievable episode return when no step is rewarded.
    pub fn return_ceiling(&self) -> Option<f64> {
        (self.step_penalty <= 0.0 && self.tau_penalty <= 0.0)
            .then(|| self.terminal_correct.max(self.terminal_wrong).max(0.0))
    }

    /// The reward table: `step_penalty + tau_penalty * tau` before the end,
    /// `terminal_correct` or `terminal_wrong` on the final step.
    pub fn reward(&self, done: bool, correct: bool, tau: u32) -> f64 {
        match (done, correct) {
            (false, _) => self.step_penalty + self.tau_penalty * tau as f64,
            (true, true) => self.terminal_correct,
            (true, false) => self.terminal_wrong,
        }
    }
}

/// Length of the flattened state for embedding size `c` and fingerprint size `h`.
pub const fn state_dim(c: usize, h: usize) -> usize {
    2 * c + h + 3
}

/// Per-coordinate factors that bring the state to unit scale for a value
/// network: ones everywhere except `tau`, which is divided by `max_turns`.
pub fn state_input_scale(c: usize, h: usize, max_turns: usize) -> Vec<f64> {
    let mut s = vec![1.0; state_dim(c, h)];
    s[state_dim(c, h) - 1] = 1.0 / max_turns.max(1) as f64;
    s
}

/// What the agent observes at a turn.
#[derive(Clone, Debug, PartialEq)]
pub struct DialogueState {
    pub current_response: Vec<f64>,
    pub moving_average: Vec<f64>,
    pub fingerprint: Vec<f64>,
    /// `[p_NL, p_MCI]` on the moving average.
    pub class_probs: [f64; 2],
    pub tau: u32,
}

impl DialogueState {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.current_response);
        v.extend_from_slice(&self.moving_average);
        v.extend_from_slice(&self.fingerprint);
        v.extend_from_slice(&self.class_probs);
        v.push(self.tau as f64);
        v
    }

    pub fn unflatten(values: &[f64], c: usize, h: usize) -> Result<Self> {
        check_len("flattened state", state_dim(c, h), values.len())?;
        let tau = values[2 * c + h + 2];
        if !(tau >= 0.0 && tau == (tau as u32) as f64) {
            return Err(usage("tau coordinate must be a nonnegative integer"));
        }
        Ok(Self {
            current_response: values[..c].to_vec(),
            moving_average: values[c..2 * c].to_vec(),
            fingerprint: values[2 * c..2 * c + h].to_vec(),
            class_probs: [values[2 * c + h], values[2 * c + h + 1]],
            tau: tau as u32,
        })
    }

    pub fn dim(&self) -> usize {
        2 * self.current_response.len() + self.fingerprint.len() + 3
    }
}

/// Something that answers questions with response embeddings.
pub trait Responder {
    fn respond(&mut self, question: usize) -> Result<Vec<f64>>;
}

impl Responder for &SimulatorModel {
    fn respond(&mut self, question: usize) -> Result<Vec<f64>> {
        self.simulate_response(question)
    }
}

impl<R: Responder + ?Sized> Responder for &mut R {
    fn respond(&mut self, question: usize) -> Result<Vec<f64>> {
        (**self).respond(question)
    }
}

/// Replays recorded turns in order; each question must match the record.
#[derive(Clone, Debug)]
pub struct ScriptedResponder<'a> {
    turns: &'a [Turn],
    next: usize,
}

impl<'a> ScriptedResponder<'a> {
    pub fn new(turns: &'a [Turn]) -> Self {
        Self { turns, next: 0 }
    }
}

impl Responder for ScriptedResponder<'_> {
    fn respond(&mut self, question: usize) -> Result<Vec<f64>> {
        let turn = self
            .turns
            .get(self.next)
            .ok_or_else(|| usage("scripted responder ran out of recorded turns"))?;
        if turn.question != question {
            return Err(usage(alloc::format!(
                "scripted turn {} answers question {}, not {question}",
                self.next,
                turn.question
            )));
        }
        self.next += 1;
        Ok(turn.response.clone())
    }
}

/// Result of one environment step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
}

/// One line of an episode trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub turn: usize,
    pub action_id: usize,
    pub reward: f64,
    pub p_mci: f64,
    pub tau: u32,
    pub done: bool,
}

/// A single conversation with one user.
pub struct Environment<'a, R> {
    catalog: &'a QuestionCatalog,
    classifier: &'a ClassifierModel,
    config: &'a EnvConfig,
    responder: R,
    label: Option<Label>,
    state: DialogueState,
    history: Vec<usize>,
    response_sum: Vec<f64>,
    responses_in_average: usize,
    turn: usize,
    done: bool,
}

impl<'a, R: Responder> Environment<'a, R> {
    /// Starts an episode by asking the pinned greeting (turn 0). `label` is
    /// the ground truth used for terminal rewards; without it terminal
    /// rewards are reported as 0.
    pub fn reset(
        catalog: &'a QuestionCatalog,
        classifier: &'a ClassifierModel,
        config: &'a EnvConfig,
        mut responder: R,
        fingerprint: Vec<f64>,
        label: Option<Label>,
    ) -> Result<Self> {
        config.validate()?;
        let greeting = catalog.greeting();
        let first = responder.respond(greeting)?;
        let c = classifier.dim();
        check_len("response embedding", c, first.len())?;
        let (response_sum, responses_in_average) = if config.include_greeting {
            (first.clone(), 1)
        } else {
            (vec![0.0; c], 0)
        };
        let mut env = Self {
            catalog,
            classifier,
            config,
            responder,
            label,
            state: DialogueState {
                current_response: first,
                moving_average: Vec::new(),
                fingerprint,
                class_probs: [0.5, 0.5],
                tau: 0,
            },
            history: vec![greeting],
            response_sum,
            responses_in_average,
            turn: 0,
            done: false,
        };
        env.refresh_average()?;
        Ok(env)
    }

    fn refresh_average(&mut self) -> Result<()> {
        let n = self.responses_in_average;
        self.state.moving_average = if n == 0 {
            vec![0.0; self.response_sum.len()]
        } else {
            self.response_sum.iter().map(|s| s / n as f64).collect()
        };
        self.state.class_probs = self.classifier.predict_proba(&self.state.moving_average)?;
        Ok(())
    }

    pub fn state(&self) -> &DialogueState {
        &self.state
    }

    pub fn observation(&self) -> Vec<f64> {
        self.state.flatten()
    }

    /// Questions asked so far, greeting first.
    pub fn history(&self) -> &[usize] {
        &self.history
    }

    /// Agent questions asked so far.
    pub fn turn(&self) -> usize {
        self.turn
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn config(&self) -> &EnvConfig {
        self.config
    }

    /// Actions the agent may take next.
    pub fn action_mask(&self) -> Result<ActionMask> {
        self.catalog.action_mask(&self.history)
    }

    /// Label the classifier assigns to the current moving average.
    pub fn predicted_label(&self) -> Label {
        label_for(self.state.class_probs[1])
    }

    /// Asks `action`, which must be selectable under the current mask.
    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        if !self.action_mask()?.is_allowed(action) {
            return Err(usage(alloc::format!("action {action} is masked at turn {}", self.turn + 1)));
        }
        self.advance(action)
    }

    /// Like [`Self::step`] without the mask check; used to replay recorded
    /// interviews whose question order predates the policy rules.
    pub fn step_unmasked(&mut self, action: usize) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        self.catalog.get(action)?;
        self.advance(action)
    }

    fn advance(&mut self, action: usize) -> Result<StepOutcome> {
        let response = self.responder.respond(action)?;
        check_len("response embedding", self.response_sum.len(), response.len())?;
        for (s, r) in self.response_sum.iter_mut().zip(&response) {
            *s += r;
        }
        self.responses_in_average += 1;
        self.state.current_response = response;
        self.refresh_average()?;
        let [p_nl, p_mci] = self.state.class_probs;
        if p_nl.max(p_mci) >= self.config.confidence_threshold {
            self.state.tau += 1;
        }
        self.turn += 1;
        self.history.push(action);
        self.done = self.catalog.is_goodbye(action) || self.turn >= self.config.max_turns;
        let reward = if self.done {
            match self.label {
                Some(label) => self.config.reward(true, self.predicted_label() == label, self.state.tau),
                None => 0.0,
            }
        } else {
            self.config.reward(false, false, self.state.tau)
        };
        Ok(StepOutcome {
            reward,
            done: self.done,
        })
    }

    /// Trace line for the step just taken.
    pub fn trace_event(&self, outcome: StepOutcome) -> TraceEvent {
        TraceEvent {
            turn: self.turn,
            action_id: *self.history.last().unwrap(),
            reward: outcome.reward,
            p_mci: self.state.class_probs[1],
            tau: self.state.tau,
            done: outcome.done,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> QuestionCatalog {
        QuestionCatalog::parse(
            "0\tgreetings\tHi\n1\tsocial\tFriends?\n2\tconfirmation\tReally?\n3\tpicture\tPicture?\n4\tgoodbye\tBye\n",
        )
        .unwrap()
    }

    /// Answers question q with the vector [q, 1].
    struct Echo;

    impl Responder for Echo {
        fn respond(&mut self, q: usize) -> Result<Vec<f64>> {
            Ok(vec![q as f64, 1.0])
        }
    }

    #[test]
    fn reward_table() {
        let cfg = EnvConfig::default();
        assert_eq!(cfg.reward(false, false, 0), -10.0);
        assert_eq!(cfg.reward(false, true, 3), -40.0);
        assert_eq!(cfg.reward(true, true, 7), 1000.0);
        assert_eq!(cfg.reward(true, false, 0), -500.0);
    }

    #[test]
    fn state_layout() {
        assert_eq!(state_dim(4800, 512), 10115);
        assert_eq!(state_dim(64, 32), 163);
        let s = DialogueState {
            current_response: vec![1.0, 2.0],
            moving_average: vec![3.0, 4.0],
            fingerprint: vec![5.0],
            class_probs: [0.25, 0.75],
            tau: 6,
        };
        let flat = s.flatten();
        assert_eq!(flat, [1.0, 2.0, 3.0, 4.0, 5.0, 0.25, 0.75, 6.0]);
        assert_eq!(DialogueState::unflatten(&flat, 2, 1).unwrap(), s);
        assert!(DialogueState::unflatten(&flat, 2, 2).is_err());
    }

    #[test]
    fn reset_asks_greeting_and_averages() {
        let cat = catalog();
        let clf = ClassifierModel::logistic(vec![1.0, 0.0], -2.0);
        let cfg = EnvConfig::default();
        let mut env = Environment::reset(&cat, &clf, &cfg, Echo, vec![0.5; 3], Some(Label::Mci)).unwrap();
        assert_eq!(env.state().current_response, [0.0, 1.0]);
        assert_eq!(env.state().moving_average, [0.0, 1.0]);
        assert_eq!(env.state().tau, 0);
        assert_eq!(env.observation().len(), state_dim(2, 3));
        // Follow-ups are masked until a topic question is asked.
        assert!(env.step(2).is_err());
        let out = env.step(3).unwrap();
        assert_eq!(env.state().moving_average, [1.5, 1.0]);
        assert!(!out.done);
        // p_MCI = sigmoid(1.5 - 2) < 0.65 and p_NL = 0.62 < 0.65: no tau.
        assert_eq!(out.reward, -10.0);
        env.step(2).unwrap();
        let end = env.step(4).unwrap();
        assert!(end.done);
        // Average (0 + 3 + 2 + 4) / 4 = 2.25 > 2 so MCI, correct.
        assert_eq!(end.reward, 1000.0);
        assert_eq!(env.step(1), Err(Error::EpisodeFinished));
    }

    #[test]
    fn timeout_is_terminal() {
        let cat = catalog();
        let clf = ClassifierModel::logistic(vec![0.0, 0.0], 0.0);
        let cfg = EnvConfig {
            max_turns: 2,
            ..EnvConfig::default()
        };
        let mut env = Environment::reset(&cat, &clf, &cfg, Echo, vec![], Some(Label::Normal)).unwrap();
        assert!(!env.step(1).unwrap().done);
        let out = env.step(3).unwrap();
        assert!(out.done);
        // p = 0.5 predicts MCI, so the NL user is misclassified.
        assert_eq!(out.reward, -500.0);
    }

    #[test]
    fn excluded_greeting_starts_from_zero_average() {
        let cat = catalog();
        let clf = ClassifierModel::logistic(vec![0.0, 0.0], 0.0);
        let cfg = EnvConfig {
            include_greeting: false,
            ..EnvConfig::default()
        };
        let mut env = Environment::reset(&cat, &clf, &cfg, Echo, vec![], None).unwrap();
        assert_eq!(env.state().moving_average, [0.0, 0.0]);
        env.step(3).unwrap();
        assert_eq!(env.state().moving_average, [3.0, 1.0]);
    }

    #[test]
    fn scripted_responder_checks_questions() {
        let turns = vec![
            Turn { question: 0, response: vec![1.0] },
            Turn { question: 1, response: vec![2.0] },
        ];
        let mut r = ScriptedResponder::new(&turns);
        assert_eq!(r.respond(0).unwrap(), [1.0]);
        assert!(r.respond(3).is_err());
    }
}
