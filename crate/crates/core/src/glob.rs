//! Minimal case-insensitive glob matching used by the scripted provider and
//! the request deny list.
//!
//! Supported syntax: `*` (any run of characters), `?` (exactly one
//! character), `\x` (literal `x`). Patterns are unanchored: `plan` matches
//! any text containing "plan".

/// An unanchored, case-insensitive glob pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Glob {
    source: String,
    tokens: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Literal(char),
    AnyOne,
    AnyRun,
}

impl Glob {
    pub fn new(pattern: &str) -> Self {
        let mut tokens = vec![Token::AnyRun];
        let mut chars = pattern.chars();
        while let Some(c) = chars.next() {
            match c {
                '*' => tokens.push(Token::AnyRun),
                '?' => tokens.push(Token::AnyOne),
                '\\' => {
                    if let Some(next) = chars.next() {
                        tokens.extend(next.to_lowercase().map(Token::Literal));
                    } else {
                        tokens.push(Token::Literal('\\'));
                    }
                }
                other => tokens.extend(other.to_lowercase().map(Token::Literal)),
            }
        }
        tokens.push(Token::AnyRun);
        tokens.dedup_by(|a, b| *a == Token::AnyRun && *b == Token::AnyRun);
        Self {
            source: pattern.to_string(),
            tokens,
        }
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }

    /// An empty pattern never matches; it marks entries that are only
    /// reachable through sequential consumption.
    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn matches(&self, text: &str) -> bool {
        if self.is_empty() {
            return false;
        }
        let text: Vec<char> = text.chars().flat_map(char::to_lowercase).collect();
        // Iterative wildcard matching with single-star backtracking.
        let (mut t, mut p) = (0usize, 0usize);
        let mut star: Option<(usize, usize)> = None;
        while t < text.len() {
            match self.tokens.get(p) {
                Some(Token::AnyRun) => {
                    star = Some((p, t));
                    p += 1;
                }
                Some(Token::AnyOne) => {
                    t += 1;
                    p += 1;
                }
                Some(Token::Literal(c)) if *c == text[t] => {
                    t += 1;
                    p += 1;
                }
                _ => match star {
                    Some((sp, st)) => {
                        p = sp + 1;
                        t = st + 1;
                        star = Some((sp, st + 1));
                    }
                    None => return false,
                },
            }
        }
        self.tokens[p..].iter().all(|tok| *tok == Token::AnyRun)
    }
}
