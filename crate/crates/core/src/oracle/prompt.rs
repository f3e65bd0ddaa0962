use crate::oracle::PromptContext;
use crate::{Error, Result};

pub const DEFAULT_SYSTEM_PROMPT: &str =
    "You are a rational decision maker; make a judgment based on your background, experience, and all known information.";

pub const DEFAULT_TEMPLATE: &str = r#"You are an ordinary online user following this event.

Agent profile: {profile}

Previous attitude: {previous_attitude}

Local social context: {local_social_context}

Current event {round_index}: {stage_text}

Please choose one option from the following list:
{options}

Decision requirements: consider your own background and standpoint; consider all previous events rather than only the current message; your view may change as the event develops.

Return JSON only:
{"decision": "1", "reasoning": "brief reason grounded in the agent profile"}"#;

const PLACEHOLDERS: [&str; 6] = [
    "profile",
    "previous_attitude",
    "local_social_context",
    "round_index",
    "stage_text",
    "options",
];

/// Prompt template with `{name}` placeholders. A `{` not followed by a
/// lowercase identifier and `}` is literal text, so JSON examples survive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self { text: DEFAULT_TEMPLATE.to_string() }
    }
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn pieces(line: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = line;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let ident_len = after
            .bytes()
            .take_while(|b| b.is_ascii_lowercase() || *b == b'_')
            .count();
        if ident_len > 0 && after.as_bytes().get(ident_len) == Some(&b'}') {
            out.push(Piece::Text(&rest[..open]));
            out.push(Piece::Slot(&after[..ident_len]));
            rest = &after[ident_len + 1..];
        } else {
            out.push(Piece::Text(&rest[..open + 1]));
            rest = after;
        }
    }
    out.push(Piece::Text(rest));
    out
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self> {
        for line in text.lines() {
            for piece in pieces(line) {
                if let Piece::Slot(name) = piece {
                    if !PLACEHOLDERS.contains(&name) {
                        return Err(Error::Template(format!("unknown placeholder {{{name}}}")));
                    }
                }
            }
        }
        Ok(Self { text: text.to_string() })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Fills the template. Lines holding `{previous_attitude}` or
    /// `{local_social_context}` are dropped (with one following blank line)
    /// when that information is unavailable.
    pub fn render(&self, ctx: &PromptContext<'_>) -> String {
        let previous = ctx
            .previous
            .map(|p| format!("{}. {}", p + 1, ctx.options[p as usize]));
        let social = ctx.neighbors.as_ref().map(|c| {
            let parts: Vec<String> = c
                .counts
                .iter()
                .enumerate()
                .map(|(k, n)| format!("option {}: {n}", k + 1))
                .collect();
            format!("{} contacts last round chose {}", c.total(), parts.join(", "))
        });
        let options = ctx
            .options
            .iter()
            .enumerate()
            .map(|(k, o)| format!("{}. {o}", k + 1))
            .collect::<Vec<_>>()
            .join("\n");
        let round = ctx.round.to_string();

        let mut out: Vec<String> = Vec::new();
        let mut skip_blank = false;
        for line in self.text.lines() {
            if skip_blank && line.trim().is_empty() {
                skip_blank = false;
                continue;
            }
            skip_blank = false;
            let mut rendered = String::new();
            let mut dropped = false;
            for piece in pieces(line) {
                match piece {
                    Piece::Text(t) => rendered.push_str(t),
                    Piece::Slot(name) => {
                        let value = match name {
                            "profile" => Some(ctx.profile),
                            "previous_attitude" => previous.as_deref(),
                            "local_social_context" => social.as_deref(),
                            "round_index" => Some(round.as_str()),
                            "stage_text" => Some(ctx.stage_text),
                            "options" => Some(options.as_str()),
                            _ => unreachable!("validated at parse time"),
                        };
                        match value {
                            Some(v) => rendered.push_str(v),
                            None => dropped = true,
                        }
                    }
                }
            }
            if dropped {
                skip_blank = true;
            } else {
                out.push(rendered);
            }
        }
        out.join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::socialgraph::StateCounts;

    fn context<'a>(options: &'a [String], previous: Option<u16>) -> PromptContext<'a> {
        PromptContext {
            agent: 3,
            round: if previous.is_some() { 2 } else { 1 },
            stage_text: "Something happened.",
            options,
            features: &[],
            profile: "age_group: 3; gender: female",
            previous,
            neighbors: previous.map(|_| StateCounts { counts: vec![4, 6] }),
        }
    }

    #[test]
    fn renders_one_line_per_option() {
        let options = vec!["Agree".to_string(), "Disagree".to_string()];
        let text = PromptTemplate::default().render(&context(&options, Some(1)));
        let numbered = text
            .lines()
            .filter(|l| l.starts_with("1. ") || l.starts_with("2. "))
            .count();
        assert!(text.contains("1. Agree\n2. Disagree"));
        assert_eq!(numbered, 2);
        assert!(text.contains("Previous attitude: 2. Disagree"));
        assert!(text.contains("10 contacts last round chose option 1: 4, option 2: 6"));
        assert!(text.ends_with(r#"{"decision": "1", "reasoning": "brief reason grounded in the agent profile"}"#));
    }

    #[test]
    fn first_round_omits_history_lines() {
        let options = vec!["A".to_string(), "B".to_string()];
        let t = PromptTemplate::default();
        let text = t.render(&context(&options, None));
        assert!(!text.contains("Previous attitude"));
        assert!(!text.contains("Local social context"));
        assert!(!text.contains("\n\n\n"));
        assert_eq!(text, t.render(&context(&options, None)));
    }

    #[test]
    fn unknown_placeholders_are_rejected() {
        assert!(matches!(PromptTemplate::parse("Hi {name}"), Err(Error::Template(_))));
        assert!(PromptTemplate::parse("{profile} {\"decision\": 1}").is_ok());
    }
}
