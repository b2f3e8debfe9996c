use serde::{Deserialize, Serialize};

use super::CaptionError;
use crate::data::{Category, Subject};

/// Where an attribute's caption lands in the main prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptSlot {
    /// Before "wears" (e.g. body shape, gender).
    Subject,
    /// Comma-joined after the garment captions.
    Body,
    /// After "with" at the end of the sentence (e.g. hand pose).
    Closing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub description: String,
    pub example_values: Vec<String>,
    pub slot: PromptSlot,
}

impl Attribute {
    pub fn new(name: &str, description: &str, examples: &[&str], slot: PromptSlot) -> Self {
        Self {
            name: name.to_string(),
            description: description.to_string(),
            example_values: examples.iter().map(|s| s.to_string()).collect(),
            slot,
        }
    }
}

/// Ordered attribute list captioned for one subject and garment category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub subject: Subject,
    pub category: Category,
    pub attributes: Vec<Attribute>,
}

impl AttributeSchema {
    pub fn new(subject: Subject, category: Category, attributes: Vec<Attribute>) -> Result<Self, CaptionError> {
        for (i, a) in attributes.iter().enumerate() {
            if attributes[..i].iter().any(|b| b.name == a.name) {
                return Err(CaptionError::DuplicateAttribute(a.name.clone()));
            }
        }
        Ok(Self {
            subject,
            category,
            attributes,
        })
    }

    /// `person/upper_body`, `clothing/dresses`, ...
    pub fn id(&self) -> String {
        format!("{}/{}", self.subject.as_str(), self.category.as_str())
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.name.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.attributes.iter().any(|a| a.name == name)
    }

    /// Attribute names every schema of this subject/category must carry.
    pub fn required_names(subject: Subject, category: Category) -> Vec<&'static str> {
        match (subject, category) {
            (Subject::Person, Category::UpperBody) => {
                vec!["body shape", "gender", "tucking style", "fit", "hand pose", "pose description"]
            }
            (Subject::Person, _) => vec!["body shape", "gender", "fit", "hand pose", "pose description"],
            (Subject::Clothing, Category::UpperBody) => vec!["cloth category", "material", "sleeve length", "neckline"],
            (Subject::Clothing, Category::LowerBody) => vec!["cloth category", "material", "length"],
            (Subject::Clothing, Category::Dresses) => {
                vec!["cloth category", "material", "sleeve length", "neckline", "length"]
            }
        }
    }

    /// Required names this schema lacks.
    pub fn missing_required(&self) -> Vec<&'static str> {
        Self::required_names(self.subject, self.category)
            .into_iter()
            .filter(|n| !self.contains(n))
            .collect()
    }

    /// Built-in schema for a subject and category.
    pub fn default_for(subject: Subject, category: Category) -> Self {
        use PromptSlot::{Body, Closing};
        let attrs = match subject {
            Subject::Person => {
                let mut v = vec![
                    Attribute::new("body shape", "overall build of the person", &["slim", "average", "athletic", "curvy", "broad"], PromptSlot::Subject),
                    Attribute::new("gender", "apparent gender presentation", &["woman", "man"], PromptSlot::Subject),
                ];
                if category == Category::UpperBody {
                    v.push(Attribute::new(
                        "tucking style",
                        "how the top is worn relative to the waistband",
                        &["fully tucked in", "untucked", "french tucked"],
                        Body,
                    ));
                }
                v.push(Attribute::new("fit", "how closely the garment follows the body", &["tight fit", "regular fit", "loose fit"], Body));
                v.push(Attribute::new(
                    "pose description",
                    "body pose in a few words",
                    &["standing facing forward", "standing turned slightly left", "walking forward"],
                    Body,
                ));
                v.push(Attribute::new(
                    "hand pose",
                    "where the hands are and what they do",
                    &["arms down at the sides", "hands on hips", "one hand in pocket"],
                    Closing,
                ));
                v
            }
            Subject::Clothing => {
                let category_examples: &[&str] = match category {
                    Category::UpperBody => &["t-shirt", "blouse", "sweater", "shirt"],
                    Category::LowerBody => &["jeans", "trousers", "shorts", "skirt"],
                    Category::Dresses => &["sundress", "shirt dress", "slip dress"],
                };
                let mut v = vec![
                    Attribute::new("cloth category", "garment type", category_examples, Body),
                    Attribute::new("material", "dominant fabric", &["cotton", "denim", "knit", "linen", "silk"], Body),
                ];
                if category != Category::LowerBody {
                    v.push(Attribute::new(
                        "sleeve length",
                        "sleeve length",
                        &["sleeveless", "short sleeves", "elbow-length sleeves", "long sleeves"],
                        Body,
                    ));
                    v.push(Attribute::new("neckline", "neckline shape", &["crew neck", "v-neck", "collared", "square neck"], Body));
                }
                if category != Category::UpperBody {
                    v.push(Attribute::new("length", "garment length", &["mini", "knee length", "midi", "ankle length"], Body));
                }
                v
            }
        };
        Self::new(subject, category, attrs).expect("built-in names are unique")
    }
}
