use super::DomainDatabase;

/// Replaces entity values in text by `[domain_slot]` placeholders.
#[derive(Debug, Clone, Default)]
pub struct Delexicalizer {
    // (lower-cased value, placeholder), longest value first
    entries: Vec<(String, String)>,
}

impl Delexicalizer {
    /// Delexicalizes the key slot and every requestable slot of every entity.
    pub fn from_database(db: &DomainDatabase) -> Self {
        let mut entries = Vec::new();
        for (domain, list) in &db.entities {
            let Some(schema) = db.schema.domain(domain) else {
                continue;
            };
            let slots: Vec<&String> = std::iter::once(&schema.key)
                .chain(schema.requestable.iter())
                .collect();
            for entity in list {
                for slot in &slots {
                    if let Some(v) = entity.get(*slot) {
                        let v = v.trim().to_lowercase();
                        if v.len() >= 2 {
                            entries.push((v, format!("[{domain}_{slot}]")));
                        }
                    }
                }
            }
        }
        entries.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.cmp(b)));
        entries.dedup_by(|a, b| a.0 == b.0);
        Delexicalizer { entries }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Lower-cases `text` and substitutes every whole-word entity value.
    pub fn apply(&self, text: &str) -> String {
        let mut out = text.to_lowercase();
        for (value, placeholder) in &self.entries {
            out = replace_whole(&out, value, placeholder);
        }
        out
    }
}

fn replace_whole(haystack: &str, needle: &str, with: &str) -> String {
    let mut out = String::with_capacity(haystack.len());
    let mut rest = haystack;
    while let Some(pos) = rest.find(needle) {
        let before = rest[..pos].chars().next_back();
        let after = rest[pos + needle.len()..].chars().next();
        let boundary = |c: Option<char>| c.is_none_or(|c| !c.is_alphanumeric());
        out.push_str(&rest[..pos]);
        if boundary(before) && boundary(after) {
            out.push_str(with);
        } else {
            out.push_str(needle);
        }
        rest = &rest[pos + needle.len()..];
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth::synth_corpus;

    #[test]
    fn replaces_names_and_attributes() {
        let (_, db) = synth_corpus(4, 1, &["hotel"]);
        let e = &db.entities["hotel"][0];
        let d = Delexicalizer::from_database(&db);
        let text = format!("{} is at {} , phone {} .", e["name"], e["address"], e["phone"]).to_uppercase();
        let out = d.apply(&text);
        assert_eq!(out, "[hotel_name] is at [hotel_address] , phone [hotel_phone] .");
    }

    #[test]
    fn respects_word_boundaries() {
        assert_eq!(replace_whole("cheaper cheap", "cheap", "[x]"), "cheaper [x]");
    }
}
