use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::lexer::{tokenize, Token, TokenKind};
use super::normalize::normalize_code;
use super::{ExtractError, SourceFile};
use crate::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    Public,
    External,
    Internal,
    Private,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionKind {
    Function,
    Modifier,
    Constructor,
    Fallback,
    Receive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

/// One function, modifier or constructor definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub id: String,
    pub file: String,
    pub contract: String,
    pub name: String,
    pub kind: FunctionKind,
    /// Canonical comma-separated parameter types, e.g. `address,uint256`.
    pub signature: String,
    pub visibility: Visibility,
    pub span: Span,
    /// Normalized definition text, header through closing brace.
    pub source: String,
}

impl FunctionRecord {
    pub fn arity(&self) -> usize {
        if self.signature.is_empty() {
            0
        } else {
            split_top_level(&self.signature, ',').len()
        }
    }

    /// `Contract.name(types)`, or `name(types)` for free functions.
    pub fn qualified_name(&self) -> String {
        if self.contract.is_empty() {
            format!("{}({})", self.name, self.signature)
        } else {
            format!("{}.{}({})", self.contract, self.name, self.signature)
        }
    }

    pub fn code_hash(&self) -> String {
        sha256_hex(&self.source)
    }
}

fn split_top_level(s: &str, sep: char) -> Vec<&str> {
    let mut depth = 0i32;
    let mut parts = Vec::new();
    let mut last = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            c if c == sep && depth == 0 => {
                parts.push(&s[last..i]);
                last = i + c.len_utf8();
            }
            _ => {}
        }
    }
    parts.push(&s[last..]);
    parts
}

/// Index of the matching `}` for every `{` token.
pub(crate) fn match_braces(tokens: &[Token<'_>], path: &str) -> Result<HashMap<usize, usize>, ExtractError> {
    let mut stack = Vec::new();
    let mut pairs = HashMap::new();
    for (i, t) in tokens.iter().enumerate() {
        if t.is_punct('{') {
            stack.push(i);
        } else if t.is_punct('}') {
            let open = stack.pop().ok_or_else(|| ExtractError::Parse {
                path: path.to_string(),
                line: t.line,
            })?;
            pairs.insert(open, i);
        }
    }
    if let Some(&open) = stack.last() {
        return Err(ExtractError::Parse {
            path: path.to_string(),
            line: tokens[open].line,
        });
    }
    Ok(pairs)
}

/// Index of the `)` matching the `(` at `open`, or `None` if unbalanced.
pub(crate) fn match_paren(tokens: &[Token<'_>], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    for (i, t) in tokens.iter().enumerate().skip(open) {
        if t.is_punct('(') {
            depth += 1;
        } else if t.is_punct(')') {
            depth -= 1;
            if depth == 0 {
                return Some(i);
            }
        }
    }
    None
}

const CONTAINER_KEYWORDS: &[&str] = &["contract", "interface", "library"];
const LOCATIONS: &[&str] = &["memory", "storage", "calldata"];

fn canonical_type_word(word: &str) -> &str {
    match word {
        "uint" => "uint256",
        "int" => "int256",
        "byte" => "bytes1",
        "ufixed" => "ufixed128x18",
        "fixed" => "fixed128x18",
        other => other,
    }
}

fn canonical_param_type(param: &[Token<'_>]) -> String {
    let mut toks: Vec<&Token<'_>> = param
        .iter()
        .filter(|t| !(t.kind == TokenKind::Ident && LOCATIONS.contains(&t.text)))
        .collect();
    if toks.len() >= 2 {
        let last = toks[toks.len() - 1];
        let prev = toks[toks.len() - 2];
        let names_param = last.kind == TokenKind::Ident && last.text != "payable" && !prev.is_punct('.');
        if names_param {
            toks.pop();
        }
    }
    let mut out = String::new();
    let mut prev_word = false;
    for t in toks {
        let word = matches!(t.kind, TokenKind::Ident | TokenKind::Number);
        if word && prev_word {
            out.push(' ');
        }
        out.push_str(if t.kind == TokenKind::Ident {
            canonical_type_word(t.text)
        } else {
            t.text
        });
        prev_word = word;
    }
    out
}

/// Canonical parameter list for the parenthesized range `(open, close)`.
pub(crate) fn canonical_signature(tokens: &[Token<'_>], open: usize, close: usize) -> String {
    let inner = &tokens[open + 1..close];
    if inner.is_empty() {
        return String::new();
    }
    let mut params = Vec::new();
    let mut depth = 0i32;
    let mut begin = 0;
    for (i, t) in inner.iter().enumerate() {
        if t.is_punct('(') || t.is_punct('[') {
            depth += 1;
        } else if t.is_punct(')') || t.is_punct(']') {
            depth -= 1;
        } else if t.is_punct(',') && depth == 0 {
            params.push(canonical_param_type(&inner[begin..i]));
            begin = i + 1;
        }
    }
    params.push(canonical_param_type(&inner[begin..]));
    params.join(",")
}

/// Parsed header of a definition starting at `tokens[at]`.
pub(crate) struct Header {
    pub kind: FunctionKind,
    pub name: String,
    pub params: Option<(usize, usize)>,
    /// Index of the body's `{`, or `None` for a bodiless declaration.
    pub body_open: Option<usize>,
    /// Index of the token that ends the header (`{` or `;`).
    pub end: usize,
    pub visibility: Visibility,
}

/// Recognizes a definition header starting with a definition keyword at
/// `at`. Returns `None` when the keyword is used in another role (e.g. a
/// function type in a variable declaration).
pub(crate) fn parse_header(tokens: &[Token<'_>], at: usize, contract: &str) -> Option<Header> {
    let kw = tokens[at];
    if kw.kind != TokenKind::Ident {
        return None;
    }
    let next = tokens.get(at + 1)?;
    let (kind, name, mut cursor) = match kw.text {
        "function" if next.kind == TokenKind::Ident => {
            let kind = match next.text {
                "fallback" => FunctionKind::Fallback,
                "receive" => FunctionKind::Receive,
                n if n == contract => FunctionKind::Constructor,
                _ => FunctionKind::Function,
            };
            (kind, next.text.to_string(), at + 2)
        }
        // Pre-0.6 unnamed fallback: `function () external { ... }`.
        "function" if next.is_punct('(') => (FunctionKind::Fallback, "fallback".to_string(), at + 1),
        "modifier" if next.kind == TokenKind::Ident => (FunctionKind::Modifier, next.text.to_string(), at + 2),
        "constructor" if next.is_punct('(') => (FunctionKind::Constructor, "constructor".to_string(), at + 1),
        "fallback" if next.is_punct('(') => (FunctionKind::Fallback, "fallback".to_string(), at + 1),
        "receive" if next.is_punct('(') => (FunctionKind::Receive, "receive".to_string(), at + 1),
        _ => return None,
    };

    let params = if tokens.get(cursor).is_some_and(|t| t.is_punct('(')) {
        let close = match_paren(tokens, cursor)?;
        let range = (cursor, close);
        cursor = close + 1;
        Some(range)
    } else if kind == FunctionKind::Modifier {
        None
    } else {
        return None;
    };

    let mut visibility = Visibility::Unknown;
    let mut depth = 0i32;
    let mut i = cursor;
    while i < tokens.len() {
        let t = tokens[i];
        if t.is_punct('(') {
            depth += 1;
        } else if t.is_punct(')') {
            depth -= 1;
        } else if depth == 0 && (t.is_punct('{') || t.is_punct(';')) {
            let body_open = t.is_punct('{').then_some(i);
            return Some(Header {
                kind,
                name,
                params,
                body_open,
                end: i,
                visibility,
            });
        } else if depth == 0 && t.is_punct('}') {
            return None;
        } else if depth == 0 && t.kind == TokenKind::Ident && visibility == Visibility::Unknown {
            visibility = match t.text {
                "public" => Visibility::Public,
                "external" => Visibility::External,
                "internal" => Visibility::Internal,
                "private" => Visibility::Private,
                _ => Visibility::Unknown,
            };
        }
        i += 1;
    }
    None
}

struct Container {
    name: String,
    close: usize,
}

/// One record per function / modifier / constructor / fallback / receive
/// definition that has a body, in source order.
pub fn extract_functions(file: &SourceFile) -> Result<Vec<FunctionRecord>, ExtractError> {
    let content = &file.content;
    let tokens = tokenize(content);
    let braces = match_braces(&tokens, &file.path)?;

    let mut records: Vec<FunctionRecord> = Vec::new();
    let mut containers: Vec<Container> = Vec::new();
    let mut i = 0usize;

    while i < tokens.len() {
        let t = tokens[i];
        if containers.last().is_some_and(|c| c.close == i) {
            containers.pop();
            i += 1;
            continue;
        }

        let after_dot = i > 0 && tokens[i - 1].is_punct('.');
        if t.kind == TokenKind::Ident && CONTAINER_KEYWORDS.contains(&t.text) && !after_dot {
            if let Some(name_tok) = tokens.get(i + 1).filter(|n| n.kind == TokenKind::Ident) {
                let open = (i + 2..tokens.len()).find(|&k| tokens[k].is_punct('{') || tokens[k].is_punct(';'));
                if let Some(open) = open.filter(|&k| tokens[k].is_punct('{')) {
                    containers.push(Container {
                        name: name_tok.text.to_string(),
                        close: braces[&open],
                    });
                    i = open + 1;
                    continue;
                }
            }
        }

        let contract = containers.last().map(|c| c.name.as_str()).unwrap_or("");
        if !after_dot {
            if let Some(header) = parse_header(&tokens, i, contract) {
                match header.body_open {
                    Some(open) => {
                        let close = braces[&open];
                        let raw = &content[t.start..tokens[close].end];
                        let source = normalize_code(raw);
                        let signature = header
                            .params
                            .map(|(o, c)| canonical_signature(&tokens, o, c))
                            .unwrap_or_default();
                        records.push(FunctionRecord {
                            id: String::new(),
                            file: file.path.clone(),
                            contract: contract.to_string(),
                            name: header.name,
                            kind: header.kind,
                            signature,
                            visibility: header.visibility,
                            span: Span {
                                start: t.line,
                                end: tokens[close].line,
                            },
                            source,
                        });
                        i = close + 1;
                    }
                    None => i = header.end + 1,
                }
                continue;
            }
        }

        if t.is_punct('{') {
            // struct / enum / assembly-free blocks at declaration level
            i = braces[&i] + 1;
            continue;
        }
        i += 1;
    }

    Ok(records)
}

/// Assigns `Contract.name(sig)#hash8` identifiers, suffixing `~n` on clashes.
pub(crate) fn assign_ids(records: &mut [FunctionRecord]) {
    let mut seen: HashMap<String, usize> = HashMap::new();
    for r in records.iter_mut() {
        let base = format!("{}#{}", r.qualified_name(), &r.code_hash()[..8]);
        let n = seen.entry(base.clone()).or_insert(0);
        *n += 1;
        r.id = if *n == 1 { base } else { format!("{base}~{n}") };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(src: &str) -> SourceFile {
        SourceFile::new("t.sol", src)
    }

    #[test]
    fn two_functions_with_visibility() {
        let src = "contract C {\n  function f() public {}\n  function g() internal {}\n}\n";
        let recs = extract_functions(&file(src)).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].visibility, Visibility::Public);
        assert_eq!(recs[1].visibility, Visibility::Internal);
        assert_eq!(recs[0].span, Span { start: 2, end: 2 });
    }

    #[test]
    fn empty_and_pragma_only() {
        assert!(extract_functions(&file("")).unwrap().is_empty());
        assert!(extract_functions(&file("pragma solidity ^0.8.0;\n"))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn unbalanced_braces_report_line() {
        let err = extract_functions(&file("contract C {\n function f() public {\n}\n")).unwrap_err();
        assert_eq!(
            err,
            ExtractError::Parse {
                path: "t.sol".into(),
                line: 1
            }
        );
        let err = extract_functions(&file("contract C {}\n}\n")).unwrap_err();
        assert_eq!(
            err,
            ExtractError::Parse {
                path: "t.sol".into(),
                line: 2
            }
        );
    }

    #[test]
    fn signatures_are_canonical() {
        let src = "contract C {\n function f(uint a, address payable b, bytes memory c, mapping(address => uint) storage m, Lib.S calldata s, uint[] memory xs) internal {}\n function g(uint, address payable) external {}\n}";
        let recs = extract_functions(&file(src)).unwrap();
        assert_eq!(
            recs[0].signature,
            "uint256,address payable,bytes,mapping(address=>uint256),Lib.S,uint256[]"
        );
        assert_eq!(recs[0].arity(), 6);
        assert_eq!(recs[1].signature, "uint256,address payable");
    }

    #[test]
    fn kinds_and_bodiless_declarations() {
        let src = r#"
interface I { function x() external; }
abstract contract A {
    function (uint) internal pure returns (uint) hook;
    modifier only { _; }
    modifier gated(uint v) { require(v > 0); _; }
    constructor(uint v) ERC20("a", "b") { }
    fallback() external payable { }
    receive() external payable { }
    function y() public virtual;
}
function free(uint a) pure returns (uint) { return a; }
"#;
        let recs = extract_functions(&file(src)).unwrap();
        let kinds: Vec<_> = recs
            .iter()
            .map(|r| (r.kind, r.name.as_str(), r.contract.as_str()))
            .collect();
        assert_eq!(
            kinds,
            vec![
                (FunctionKind::Modifier, "only", "A"),
                (FunctionKind::Modifier, "gated", "A"),
                (FunctionKind::Constructor, "constructor", "A"),
                (FunctionKind::Fallback, "fallback", "A"),
                (FunctionKind::Receive, "receive", "A"),
                (FunctionKind::Function, "free", ""),
            ]
        );
        assert_eq!(recs[1].signature, "uint256");
        assert_eq!(recs[0].signature, "");
    }

    #[test]
    fn braces_in_strings_and_comments_ignored() {
        let src = "contract C {\n  // }\n  function f() public { emit E(\"}\"); /* { */ }\n}";
        let recs = extract_functions(&file(src)).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].source, "function f() public { emit E(\"}\"); /* { */ }");
    }

    #[test]
    fn source_is_normalized() {
        let src = "contract C {\n    function  f( uint  a )   public {\n        a  =  1;   \n    }\n}";
        let recs = extract_functions(&file(src)).unwrap();
        assert_eq!(recs[0].source, "function f( uint a ) public {\na = 1;\n}");
        assert_eq!(normalize_code(&recs[0].source), recs[0].source);
    }
}
