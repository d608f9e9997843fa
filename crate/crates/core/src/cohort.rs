//! Synthetic cohorts and interview transcripts in response-embedding space.
//!
//! Each user answers question `q` with a vector drawn around a per-user mean
//!
//! ```text
//! mean(q) = base(q) + label * delta * direction(q) * [q discriminative] + offset(user)
//! ```
//!
//! plus isotropic Gaussian noise per turn. `base` and `direction` are fixed
//! per question by the seed; `direction(q)` is a random unit vector.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::catalog::{Category, QuestionCatalog};
use crate::error::{usage, Error, Result};
use crate::math::{norm, round};
use crate::rng::{derive_seed, rng_from_seed, standard_normal, stream, Rng};

/// Diagnostic class of a user.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    /// Normal ageing (0).
    Normal,
    /// Mild cognitive impairment (1), the positive class.
    Mci,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Normal => 0,
            Label::Mci => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Normal),
            1 => Some(Label::Mci),
            _ => None,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Mci
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.index() as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Label::from_index(v as usize).ok_or_else(|| usage(alloc::format!("label must be 0 or 1, got {v}")))
    }
}

/// Parameters of a synthetic cohort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub n_users: usize,
    /// Fraction of users labelled MCI.
    pub class_balance: f64,
    /// Embedding dimension `c`.
    pub embedding_dim: usize,
    /// Questions whose mean response depends on the label.
    pub discriminative_ids: Vec<usize>,
    /// Norm of the class separation on each discriminative question.
    pub delta: f64,
    /// Per-coordinate std of the shared per-question base means.
    pub base_scale: f64,
    /// Per-coordinate std of each user's offset.
    pub sigma_user: f64,
    /// Per-coordinate std of per-turn response noise.
    pub sigma_noise: f64,
    pub conversations_per_user: usize,
    /// Inclusive bounds on turns per transcript, greeting and goodbye included.
    pub turns_min: usize,
    pub turns_max: usize,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_users: 60,
            class_balance: 0.5,
            embedding_dim: 64,
            discriminative_ids: Vec::new(),
            delta: 0.0,
            base_scale: 0.1,
            sigma_user: 0.1,
            sigma_noise: 1.0,
            conversations_per_user: 3,
            turns_min: 30,
            turns_max: 275,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self, catalog: &QuestionCatalog) -> Result<()> {
        if self.n_users == 0 || self.embedding_dim == 0 || self.conversations_per_user == 0 {
            return Err(usage("n_users, embedding_dim and conversations_per_user must be positive"));
        }
        if !(self.class_balance > 0.0 && self.class_balance < 1.0) {
            return Err(usage("class_balance must lie in (0, 1)"));
        }
        if self.turns_min == 0 || self.turns_min > self.turns_max {
            return Err(usage("turns range must satisfy 1 <= min <= max"));
        }
        for &q in &self.discriminative_ids {
            catalog.get(q)?;
        }
        let stds = [self.delta, self.base_scale, self.sigma_user, self.sigma_noise];
        if stds.iter().any(|v| !(*v >= 0.0)) {
            return Err(usage("delta and standard deviations must be nonnegative"));
        }
        Ok(())
    }

    pub fn is_discriminative(&self, q: usize) -> bool {
        self.discriminative_ids.contains(&q)
    }
}

/// One synthetic user with their ground-truth response means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: usize,
    pub label: Label,
    pub offset: Vec<f64>,
    /// `d x c` mean response per question.
    pub means: Vec<Vec<f64>>,
}

/// A generated cohort plus the shared per-question parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub base_means: Vec<Vec<f64>>,
    pub directions: Vec<Vec<f64>>,
    pub users: Vec<UserRecord>,
}

impl Cohort {
    pub fn labels(&self) -> Vec<Label> {
        self.users.iter().map(|u| u.label).collect()
    }

    pub fn embedding_dim(&self) -> usize {
        self.base_means.first().map_or(0, Vec::len)
    }
}

/// One question and the response embedding it received.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    #[serde(rename = "q")]
    pub question: usize,
    #[serde(rename = "v")]
    pub response: Vec<f64>,
}

/// One conversation with one user, in turn order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub user_id: usize,
    pub conversation: usize,
    pub turns: Vec<Turn>,
}

impl Transcript {
    pub fn questions(&self) -> impl Iterator<Item = usize> + '_ {
        self.turns.iter().map(|t| t.question)
    }
}

fn gaussian_vec(rng: &mut Rng, dim: usize, std: f64) -> Vec<f64> {
    (0..dim).map(|_| std * standard_normal(rng)).collect()
}

fn unit_vec(rng: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, dim, 1.0);
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Draws a labelled cohort. Exactly `round(n_users * class_balance)` users
/// are labelled MCI, chosen by a seeded shuffle.
pub fn generate_cohort(spec: &CohortSpec, catalog: &QuestionCatalog, seed: u64) -> Result<Cohort> {
    spec.validate(catalog)?;
    if spec.delta > 0.0 && spec.discriminative_ids.is_empty() {
        log::warn!("delta > 0 but no discriminative questions: labels carry no signal");
    }
    let d = catalog.len();
    let c = spec.embedding_dim;
    let mut rng = rng_from_seed(derive_seed(seed, stream::COHORT, 0));
    let base_means: Vec<Vec<f64>> = (0..d).map(|_| gaussian_vec(&mut rng, c, spec.base_scale)).collect();
    let directions: Vec<Vec<f64>> = (0..d).map(|_| unit_vec(&mut rng, c)).collect();

    let n_mci = round(spec.n_users as f64 * spec.class_balance) as usize;
    let mut order: Vec<usize> = (0..spec.n_users).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let mut labels = vec![Label::Normal; spec.n_users];
    for &u in &order[..n_mci] {
        labels[u] = Label::Mci;
    }

    let users = (0..spec.n_users)
        .map(|user_id| {
            let mut urng = rng_from_seed(derive_seed(seed, stream::COHORT, 1 + user_id as u64));
            let offset = gaussian_vec(&mut urng, c, spec.sigma_user);
            let label = labels[user_id];
            let shift = if label == Label::Mci { spec.delta } else { 0.0 };
            let means = (0..d)
                .map(|q| {
                    let disc = spec.is_discriminative(q);
                    (0..c)
                        .map(|k| {
                            let signal = if disc { shift * directions[q][k] } else { 0.0 };
                            base_means[q][k] + signal + offset[k]
                        })
                        .collect()
                })
                .collect();
            UserRecord {
                user_id,
                label,
                offset,
                means,
            }
        })
        .collect();
    Ok(Cohort {
        base_means,
        directions,
        users,
    })
}

/// Samples `conversations_per_user` transcripts per user. Each opens with
/// the greeting, closes with a goodbye, and in between asks uniformly drawn
/// questions without immediate repetition. Responses are the user's mean
/// plus `N(0, sigma_noise^2)` noise per coordinate.
pub fn generate_transcripts(
    cohort: &Cohort,
    spec: &CohortSpec,
    catalog: &QuestionCatalog,
    seed: u64,
) -> Result<Vec<Transcript>> {
    spec.validate(catalog)?;
    let greeting = catalog.greeting();
    let goodbyes: Vec<usize> = catalog.goodbye_ids().collect();
    let pool: Vec<usize> = catalog
        .questions()
        .iter()
        .filter(|q| !matches!(q.category, Category::Greetings | Category::Goodbye))
        .map(|q| q.id)
        .collect();
    if pool.is_empty() && spec.turns_max > 2 {
        return Err(usage("catalog has no questions besides greetings and goodbyes"));
    }
    let mut out = Vec::with_capacity(cohort.users.len() * spec.conversations_per_user);
    for user in &cohort.users {
        let user_seed = derive_seed(seed, stream::TRANSCRIPTS, user.user_id as u64);
        for conversation in 0..spec.conversations_per_user {
            let mut rng = rng_from_seed(derive_seed(user_seed, stream::TRANSCRIPTS, conversation as u64));
            let len = rng.random_range(spec.turns_min..=spec.turns_max);
            let mut questions = Vec::with_capacity(len);
            questions.push(greeting);
            while questions.len() + 1 < len {
                let prev = *questions.last().unwrap();
                let q = loop {
                    let q = pool[rng.random_range(0..pool.len())];
                    if q != prev || pool.len() == 1 {
                        break q;
                    }
                };
                questions.push(q);
            }
            if len >= 2 {
                questions.push(goodbyes[rng.random_range(0..goodbyes.len())]);
            }
            let turns = questions
                .into_iter()
                .map(|q| Turn {
                    question: q,
                    response: user.means[q]
                        .iter()
                        .map(|m| m + spec.sigma_noise * standard_normal(&mut rng))
                        .collect(),
                })
                .collect();
            out.push(Transcript {
                user_id: user.user_id,
                conversation,
                turns,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::dot;

    fn spec() -> CohortSpec {
        CohortSpec {
            n_users: 60,
            embedding_dim: 8,
            discriminative_ids: vec![1, 2],
            delta: 2.0,
            turns_min: 5,
            turns_max: 12,
            ..CohortSpec::default()
        }
    }

    #[test]
    fn balanced_labels() {
        let cat = QuestionCatalog::synthetic(10).unwrap();
        let cohort = generate_cohort(&spec(), &cat, 3).unwrap();
        let mci = cohort.users.iter().filter(|u| u.label == Label::Mci).count();
        assert_eq!(mci, 30);
    }

    #[test]
    fn deterministic_given_seed() {
        let cat = QuestionCatalog::synthetic(10).unwrap();
        let a = generate_cohort(&spec(), &cat, 11).unwrap();
        let b = generate_cohort(&spec(), &cat, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_cohort(&spec(), &cat, 12).unwrap());
        let ta = generate_transcripts(&a, &spec(), &cat, 5).unwrap();
        assert_eq!(ta, generate_transcripts(&b, &spec(), &cat, 5).unwrap());
    }

    #[test]
    fn class_separation_is_delta_on_discriminative_questions() {
        let cat = QuestionCatalog::synthetic(10).unwrap();
        let s = spec();
        let cohort = generate_cohort(&s, &cat, 1).unwrap();
        for user in &cohort.users {
            for q in 0..cat.len() {
                let diff: Vec<f64> = (0..s.embedding_dim)
                    .map(|k| user.means[q][k] - cohort.base_means[q][k] - user.offset[k])
                    .collect();
                let n = norm(&diff);
                let expected = if user.label == Label::Mci && s.is_discriminative(q) { 2.0 } else { 0.0 };
                assert!((n - expected).abs() < 1e-12, "user {} q {q}: {n}", user.user_id);
            }
        }
        for dir in &cohort.directions {
            assert!((dot(dir, dir) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn transcript_structure() {
        let cat = QuestionCatalog::synthetic(10).unwrap();
        let s = spec();
        let cohort = generate_cohort(&s, &cat, 2).unwrap();
        let ts = generate_transcripts(&cohort, &s, &cat, 9).unwrap();
        assert_eq!(ts.len(), 60 * 3);
        for t in &ts {
            assert!((5..=12).contains(&t.turns.len()));
            assert_eq!(t.turns[0].question, cat.greeting());
            assert!(cat.is_goodbye(t.turns.last().unwrap().question));
            for w in t.turns.windows(2) {
                assert_ne!(w[0].question, w[1].question);
            }
            assert!(t.turns.iter().all(|turn| turn.response.iter().all(|v| v.is_finite())));
        }
    }

    #[test]
    fn noiseless_responses_equal_means() {
        let cat = QuestionCatalog::synthetic(10).unwrap();
        let s = CohortSpec { sigma_noise: 0.0, ..spec() };
        let cohort = generate_cohort(&s, &cat, 4).unwrap();
        let ts = generate_transcripts(&cohort, &s, &cat, 4).unwrap();
        for t in &ts {
            for turn in &t.turns {
                assert_eq!(turn.response, cohort.users[t.user_id].means[turn.question]);
            }
        }
    }

    #[test]
    fn spec_validation() {
        let cat = QuestionCatalog::synthetic(10).unwrap();
        let bad = CohortSpec { discriminative_ids: vec![10], ..spec() };
        assert!(generate_cohort(&bad, &cat, 0).is_err());
        let bad = CohortSpec { turns_min: 4, turns_max: 3, ..spec() };
        assert!(generate_cohort(&bad, &cat, 0).is_err());
        let empty = CohortSpec { discriminative_ids: vec![], ..spec() };
        assert!(generate_cohort(&empty, &cat, 0).is_ok());
    }
}
