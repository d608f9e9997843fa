//! The question catalog: the agent's discrete action space.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};

/// Question categories. Follow-up categories (confirmation, clarification)
/// are masked until a topic has been raised.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Greetings,
    Activity,
    LivingSituation,
    Travel,
    Entertainment,
    Social,
    Picture,
    Tech,
    Occupation,
    Hobbies,
    Family,
    Pets,
    Confirmation,
    Clarification,
    Goodbye,
    Unspecified,
}

impl Category {
    pub const ALL: [Category; 16] = [
        Category::Greetings,
        Category::Activity,
        Category::LivingSituation,
        Category::Travel,
        Category::Entertainment,
        Category::Social,
        Category::Picture,
        Category::Tech,
        Category::Occupation,
        Category::Hobbies,
        Category::Family,
        Category::Pets,
        Category::Confirmation,
        Category::Clarification,
        Category::Goodbye,
        Category::Unspecified,
    ];

    /// Categories whose presence in the history unlocks follow-up questions.
    pub const TOPICS: [Category; 9] = [
        Category::Social,
        Category::Activity,
        Category::Tech,
        Category::Picture,
        Category::Hobbies,
        Category::Occupation,
        Category::Travel,
        Category::Entertainment,
        Category::Family,
    ];

    /// Categories hidden from the policy until a topic has come up.
    pub const MASKED: [Category; 2] = [Category::Confirmation, Category::Clarification];

    pub fn tag(self) -> &'static str {
        match self {
            Category::Greetings => "greetings",
            Category::Activity => "activity",
            Category::LivingSituation => "living_situation",
            Category::Travel => "travel",
            Category::Entertainment => "entertainment",
            Category::Social => "social",
            Category::Picture => "picture",
            Category::Tech => "tech",
            Category::Occupation => "occupation",
            Category::Hobbies => "hobbies",
            Category::Family => "family",
            Category::Pets => "pets",
            Category::Confirmation => "confirmation",
            Category::Clarification => "clarification",
            Category::Goodbye => "goodbye",
            Category::Unspecified => "unspecified",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.tag() == tag)
    }

    pub fn is_topic(self) -> bool {
        Self::TOPICS.contains(&self)
    }

    pub fn is_masked_followup(self) -> bool {
        Self::MASKED.contains(&self)
    }
}

impl core::fmt::Display for Category {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: usize,
    pub category: Category,
    /// May contain delexicalised slots such as `<activity>`, kept verbatim.
    pub text: String,
}

/// A `{0,1}` vector over the catalog; `true` means selectable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionMask(Vec<bool>);

impl ActionMask {
    pub fn all(len: usize) -> Self {
        Self(vec![true; len])
    }

    pub fn from_bools(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_allowed(&self, j: usize) -> bool {
        self.0.get(j).copied().unwrap_or(false)
    }

    pub fn set(&mut self, j: usize, allowed: bool) {
        self.0[j] = allowed;
    }

    /// Indices of selectable actions, ascending.
    pub fn allowed(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j)
    }

    pub fn count_allowed(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn as_bools(&self) -> &[bool] {
        &self.0
    }

    /// The mask as a 0/1 vector for elementwise products.
    pub fn to_vector(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// An immutable, validated list of questions with dense ids `0..d`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Question>", into = "Vec<Question>")]
pub struct QuestionCatalog {
    questions: Vec<Question>,
    greeting: usize,
}

const DEFAULT_CATALOG: &str = include_str!("../data/default_catalog.tsv");

impl QuestionCatalog {
    /// Validates a question list: ids dense and unique, at least one
    /// greeting and one goodbye question.
    pub fn new(mut questions: Vec<Question>) -> Result<Self> {
        questions.sort_by_key(|q| q.id);
        for (expected, q) in questions.iter().enumerate() {
            if q.id != expected {
                return Err(usage(if q.id < expected {
                    format!("duplicate question id {}", q.id)
                } else {
                    format!("question ids must be dense; missing id {expected}")
                }));
            }
        }
        let greeting = questions
            .iter()
            .find(|q| q.category == Category::Greetings)
            .map(|q| q.id)
            .ok_or_else(|| usage("catalog needs at least one greeting question"))?;
        if !questions.iter().any(|q| q.category == Category::Goodbye) {
            return Err(usage("catalog needs at least one goodbye question"));
        }
        Ok(Self {
            questions,
            greeting,
        })
    }

    /// The built-in 107-question catalog.
    pub fn default_catalog() -> Self {
        Self::parse(DEFAULT_CATALOG).expect("built-in catalog is valid")
    }

    /// Parses `id<TAB>category<TAB>text` records, one per line. Blank lines
    /// and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut questions = Vec::new();
        let mut line_of_id = alloc::collections::BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.splitn(3, '\t');
            let (Some(id), Some(cat), Some(text)) = (fields.next(), fields.next(), fields.next()) else {
                return Err(parse_err(line_no, "expected three tab-separated fields"));
            };
            let id: usize = id
                .trim()
                .parse()
                .map_err(|_| parse_err(line_no, &format!("invalid id {id:?}")))?;
            let category = Category::from_tag(cat.trim())
                .ok_or_else(|| parse_err(line_no, &format!("unknown category {cat:?}")))?;
            if let Some(first) = line_of_id.insert(id, line_no) {
                return Err(parse_err(
                    line_no,
                    &format!("duplicate id {id} (first seen on line {first})"),
                ));
            }
            questions.push(Question {
                id,
                category,
                text: text.to_string(),
            });
        }
        Self::new(questions).map_err(|e| match e {
            Error::Usage(m) => Error::Parse { line: 0, message: m },
            other => other,
        })
    }

    /// Serialises back to the tab-separated line format.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for q in &self.questions {
            out.push_str(&format!("{}\t{}\t{}\n", q.id, q.category, q.text));
        }
        out
    }

    /// A smaller catalog drawn from the built-in one: the first greeting at
    /// id 0, topic and other questions taken round-robin across categories,
    /// then (for `d >= 6`) one confirmation and one clarification question,
    /// and a goodbye question as the last id.
    pub fn synthetic(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(usage("a catalog needs at least a greeting and a goodbye"));
        }
        let full = Self::default_catalog();
        let first_of = |c: Category| full.questions.iter().find(|q| q.category == c).unwrap();
        let followups = if d >= 6 { 2 } else { 0 };
        let fill = d - 2 - followups;
        let pools: Vec<Vec<&Question>> = [
            Category::Activity,
            Category::Social,
            Category::Picture,
            Category::Tech,
            Category::Hobbies,
            Category::Occupation,
            Category::Travel,
            Category::Entertainment,
            Category::Family,
            Category::LivingSituation,
            Category::Pets,
            Category::Unspecified,
        ]
        .iter()
        .map(|&c| full.questions.iter().filter(|q| q.category == c).collect())
        .collect();
        let mut picked: Vec<&Question> = vec![first_of(Category::Greetings)];
        let mut round = 0;
        while picked.len() < 1 + fill {
            for pool in &pools {
                if picked.len() == 1 + fill {
                    break;
                }
                if let Some(q) = pool.get(round) {
                    picked.push(q);
                }
            }
            round += 1;
        }
        if followups > 0 {
            picked.push(first_of(Category::Confirmation));
            picked.push(first_of(Category::Clarification));
        }
        picked.push(first_of(Category::Goodbye));
        let questions = picked
            .into_iter()
            .enumerate()
            .map(|(id, q)| Question {
                id,
                category: q.category,
                text: q.text.clone(),
            })
            .collect();
        Self::new(questions)
    }

    /// Catalog size `d`.
    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn get(&self, id: usize) -> Result<&Question> {
        self.questions
            .get(id)
            .ok_or_else(|| usage(format!("question id {id} out of range 0..{}", self.len())))
    }

    pub fn category(&self, id: usize) -> Result<Category> {
        self.get(id).map(|q| q.category)
    }

    /// The greeting pinned as turn 0 of every conversation.
    pub fn greeting(&self) -> usize {
        self.greeting
    }

    pub fn is_goodbye(&self, id: usize) -> bool {
        self.questions
            .get(id)
            .is_some_and(|q| q.category == Category::Goodbye)
    }

    pub fn goodbye_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.ids_in(Category::Goodbye)
    }

    pub fn ids_in(&self, category: Category) -> impl Iterator<Item = usize> + '_ {
        self.questions
            .iter()
            .filter(move |q| q.category == category)
            .map(|q| q.id)
    }

    pub fn encode_onehot(&self, id: usize) -> Result<Vec<f64>> {
        self.get(id)?;
        let mut v = vec![0.0; self.len()];
        v[id] = 1.0;
        Ok(v)
    }

    /// The policy mask for the next turn: follow-up questions are disabled
    /// until the history contains a topic-category question.
    pub fn mask_vector(&self, history: &[usize]) -> Result<ActionMask> {
        let mut topic_seen = false;
        for &id in history {
            topic_seen |= self.category(id)?.is_topic();
        }
        Ok(ActionMask(
            self.questions
                .iter()
                .map(|q| topic_seen || !q.category.is_masked_followup())
                .collect(),
        ))
    }

    /// [`Self::mask_vector`] with greeting questions also disabled: the
    /// greeting is asked at turn 0 and is not part of the agent's choices.
    pub fn action_mask(&self, history: &[usize]) -> Result<ActionMask> {
        let mut mask = self.mask_vector(history)?;
        for id in self.ids_in(Category::Greetings) {
            mask.set(id, false);
        }
        Ok(mask)
    }
}

impl TryFrom<Vec<Question>> for QuestionCatalog {
    type Error = Error;

    fn try_from(q: Vec<Question>) -> Result<Self> {
        Self::new(q)
    }
}

impl From<QuestionCatalog> for Vec<Question> {
    fn from(c: QuestionCatalog) -> Self {
        c.questions
    }
}

fn parse_err(line: usize, message: &str) -> Error {
    Error::Parse {
        line,
        message: message.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> QuestionCatalog {
        QuestionCatalog::parse(
            "0\tgreetings\tHello\n1\tsocial\tWho did you see?\n2\tconfirmation\tReally?\n3\tgoodbye\tBye\n",
        )
        .unwrap()
    }

    #[test]
    fn onehot_encoding() {
        let c = tiny();
        assert_eq!(c.encode_onehot(0).unwrap(), [1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(c.encode_onehot(4), Err(Error::Usage(_))));
    }

    #[test]
    fn default_catalog_shape() {
        let c = QuestionCatalog::default_catalog();
        assert_eq!(c.len(), 107);
        let cats: alloc::collections::BTreeSet<_> = c.questions().iter().map(|q| q.category).collect();
        assert_eq!(cats.len(), 16);
        let has = |cat: Category, text: &str| {
            c.questions().iter().any(|q| q.category == cat && q.text == text)
        };
        assert!(has(Category::Activity, "So what did you do yesterday?"));
        assert!(has(Category::Activity, "Did you go outside lately?"));
        assert!(has(Category::Tech, "How are you with the computer?"));
        assert!(has(Category::Unspecified, "<unspecified scheduling comment>"));
        assert_eq!(c.greeting(), 0);
    }

    #[test]
    fn empty_history_masks_followups_only() {
        let c = QuestionCatalog::default_catalog();
        let m = c.mask_vector(&[]).unwrap();
        for q in c.questions() {
            assert_eq!(m.is_allowed(q.id), !q.category.is_masked_followup(), "{}", q.text);
        }
    }

    #[test]
    fn topic_in_history_unmasks_everything() {
        let c = QuestionCatalog::default_catalog();
        let social = c.ids_in(Category::Social).next().unwrap();
        assert_eq!(c.mask_vector(&[social]).unwrap(), ActionMask::all(c.len()));
    }

    #[test]
    fn greeting_alone_keeps_followups_masked() {
        let c = tiny();
        let m = c.mask_vector(&[0]).unwrap();
        assert_eq!(m.as_bools(), [true, true, false, true]);
        assert!(c.mask_vector(&[9]).is_err());
    }

    #[test]
    fn action_mask_hides_greeting() {
        let c = tiny();
        let m = c.action_mask(&[0, 1]).unwrap();
        assert_eq!(m.as_bools(), [false, true, true, true]);
    }

    #[test]
    fn parse_rejects_duplicates_and_unknown_categories() {
        let dup = QuestionCatalog::parse("0\tgreetings\tHi\n0\tgoodbye\tBye\n");
        assert!(matches!(dup, Err(Error::Parse { line: 2, .. })));
        let unknown = QuestionCatalog::parse("0\tgreetings\tHi\n1\tweather\tRain?\n");
        assert!(matches!(unknown, Err(Error::Parse { line: 2, .. })));
        assert!(QuestionCatalog::parse("").is_err());
        assert!(QuestionCatalog::parse("0\tgreetings\tHi\n").is_err());
        assert!(QuestionCatalog::parse("0\tgreetings\tHi\n2\tgoodbye\tBye\n").is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let c = QuestionCatalog::default_catalog();
        assert_eq!(QuestionCatalog::parse(&c.to_tsv()).unwrap(), c);
    }

    #[test]
    fn synthetic_catalog_layout() {
        let c = QuestionCatalog::synthetic(20).unwrap();
        assert_eq!(c.len(), 20);
        assert_eq!(c.category(0).unwrap(), Category::Greetings);
        assert!(c.is_goodbye(19));
        assert_eq!(c.category(17).unwrap(), Category::Confirmation);
        assert_eq!(c.category(18).unwrap(), Category::Clarification);
        assert!((1..5).all(|id| c.category(id).unwrap().is_topic()));
        let small = QuestionCatalog::synthetic(3).unwrap();
        assert_eq!(small.len(), 3);
        assert!(QuestionCatalog::synthetic(1).is_err());
    }
}
