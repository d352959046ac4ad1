use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Minimal JSON tree with fixed-precision numbers; objects serialize with sorted keys.
#[derive(Debug, Clone, PartialEq)]
pub enum JsonNode {
    Null,
    Bool(bool),
    Int(u64),
    Fixed { value: f64, decimals: usize },
    Str(String),
    Object(BTreeMap<String, JsonNode>),
}

impl JsonNode {
    pub fn fixed(value: f64, decimals: usize) -> Self {
        JsonNode::Fixed { value, decimals }
    }

    pub fn fixed_opt(value: Option<f64>, decimals: usize) -> Self {
        value.map_or(JsonNode::Null, |v| JsonNode::fixed(v, decimals))
    }

    pub fn object<K: Into<String>>(entries: impl IntoIterator<Item = (K, JsonNode)>) -> Self {
        JsonNode::Object(entries.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn get(&self, key: &str) -> Option<&JsonNode> {
        match self {
            JsonNode::Object(map) => map.get(key),
            _ => None,
        }
    }

    /// Pretty form with two-space indent and a trailing newline.
    pub fn to_pretty_string(&self) -> String {
        let mut out = String::new();
        self.write(&mut out, 0);
        out.push('\n');
        out
    }

    fn write(&self, out: &mut String, indent: usize) {
        match self {
            JsonNode::Null => out.push_str("null"),
            JsonNode::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            JsonNode::Int(v) => {
                let _ = write!(out, "{v}");
            }
            JsonNode::Fixed { value, decimals } => {
                if value.is_finite() {
                    let s = format!("{value:.decimals$}");
                    // Negative zero after rounding prints as plain zero.
                    match s.strip_prefix('-') {
                        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => out.push_str(rest),
                        _ => out.push_str(&s),
                    }
                } else {
                    out.push_str("null");
                }
            }
            JsonNode::Str(s) => out.push_str(&serde_json::to_string(s).expect("strings always serialize")),
            JsonNode::Object(map) if map.is_empty() => out.push_str("{}"),
            JsonNode::Object(map) => {
                out.push('{');
                for (i, (k, v)) in map.iter().enumerate() {
                    out.push_str(if i == 0 { "\n" } else { ",\n" });
                    out.push_str(&"  ".repeat(indent + 1));
                    out.push_str(&serde_json::to_string(k).expect("strings always serialize"));
                    out.push_str(": ");
                    v.write(out, indent + 1);
                }
                out.push('\n');
                out.push_str(&"  ".repeat(indent));
                out.push('}');
            }
        }
    }
}
