//! The GUI description language: tokens, vocabulary, lexer, parser and
//! canonical serializer.
//!
//! A GUI file is a sequence of element blocks. Containers open a brace
//! block; consecutive leaf siblings are separated by commas:
//!
//! ```text
//! header { btn-active , btn-inactive }
//! row { double { text } double { btn-green , small-title } }
//! ```

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use num_traits::Float;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DslError {
    #[error("unknown symbol `{lexeme}` at byte {position}")]
    UnknownSymbol { position: usize, lexeme: String },
    #[error("unbalanced braces at token {position}")]
    UnbalancedBraces { position: usize },
    #[error("`{child}` is not allowed inside `{parent}`")]
    IllegalChild { parent: String, child: String },
    #[error("unexpected token `{token}` at token {position}")]
    UnexpectedToken { position: usize, token: Token },
}

/// GUI element kinds. Containers come first, then leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    Header,
    Row,
    Single,
    Double,
    Quadruple,
    BtnActive,
    BtnInactive,
    BtnGreen,
    BtnOrange,
    BtnRed,
    Text,
    SmallTitle,
}

impl Element {
    pub const ALL: [Element; 12] = [
        Element::Header,
        Element::Row,
        Element::Single,
        Element::Double,
        Element::Quadruple,
        Element::BtnActive,
        Element::BtnInactive,
        Element::BtnGreen,
        Element::BtnOrange,
        Element::BtnRed,
        Element::Text,
        Element::SmallTitle,
    ];

    pub const COLUMNS: [Element; 3] = [Element::Single, Element::Double, Element::Quadruple];

    pub const LEAVES: [Element; 7] = [
        Element::BtnActive,
        Element::BtnInactive,
        Element::BtnGreen,
        Element::BtnOrange,
        Element::BtnRed,
        Element::Text,
        Element::SmallTitle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Element::Header => "header",
            Element::Row => "row",
            Element::Single => "single",
            Element::Double => "double",
            Element::Quadruple => "quadruple",
            Element::BtnActive => "btn-active",
            Element::BtnInactive => "btn-inactive",
            Element::BtnGreen => "btn-green",
            Element::BtnOrange => "btn-orange",
            Element::BtnRed => "btn-red",
            Element::Text => "text",
            Element::SmallTitle => "small-title",
        }
    }

    pub fn is_container(self) -> bool {
        matches!(
            self,
            Element::Header | Element::Row | Element::Single | Element::Double | Element::Quadruple
        )
    }

    pub fn is_leaf(self) -> bool {
        !self.is_container()
    }

    pub fn is_column(self) -> bool {
        matches!(self, Element::Single | Element::Double | Element::Quadruple)
    }

    /// Number of columns a column container spans a row with.
    pub fn column_count(self) -> Option<usize> {
        match self {
            Element::Single => Some(1),
            Element::Double => Some(2),
            Element::Quadruple => Some(4),
            _ => None,
        }
    }

    /// Containment rule for non-root parents.
    pub fn admits(self, child: Element) -> bool {
        match self {
            Element::Header => matches!(child, Element::BtnActive | Element::BtnInactive),
            Element::Row => child.is_column(),
            Element::Single | Element::Double | Element::Quadruple => child.is_leaf(),
            _ => false,
        }
    }

    /// Whether children of this container are leaves (and thus comma separated).
    fn holds_leaves(self) -> bool {
        !matches!(self, Element::Row)
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Element {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Element::ALL
            .iter()
            .copied()
            .find(|e| e.as_str() == s)
            .ok_or(())
    }
}

/// A discrete DSL symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Token {
    Pad,
    Start,
    End,
    Open,
    Close,
    Comma,
    Element(Element),
}

impl Token {
    pub fn as_str(self) -> &'static str {
        match self {
            Token::Pad => "<PAD>",
            Token::Start => "<START>",
            Token::End => "<END>",
            Token::Open => "{",
            Token::Close => "}",
            Token::Comma => ",",
            Token::Element(e) => e.as_str(),
        }
    }

    /// START, END and PAD delimit model sequences and never occur in a file.
    pub fn is_control(self) -> bool {
        matches!(self, Token::Pad | Token::Start | Token::End)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Token {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Vocabulary::standard()
            .symbols()
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or(())
    }
}

/// Fixed, ordered token set with a bijective index map used for one-hot coding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<Token>,
    index: HashMap<Token, usize>,
}

impl Vocabulary {
    /// The 18-symbol vocabulary. Declaration order is part of the checkpoint
    /// format and must not change.
    pub fn standard() -> Self {
        let mut symbols = vec![
            Token::Pad,
            Token::Start,
            Token::End,
            Token::Open,
            Token::Close,
            Token::Comma,
        ];
        symbols.extend(Element::ALL.iter().map(|&e| Token::Element(e)));
        Self::from_symbols(symbols)
    }

    pub fn from_symbols(symbols: Vec<Token>) -> Self {
        let index = symbols.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        Self { symbols, index }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[Token] {
        &self.symbols
    }

    pub fn index_of(&self, token: Token) -> Option<usize> {
        self.index.get(&token).copied()
    }

    pub fn token(&self, index: usize) -> Option<Token> {
        self.symbols.get(index).copied()
    }

    pub fn pad(&self) -> usize {
        self.index[&Token::Pad]
    }

    pub fn start(&self) -> usize {
        self.index[&Token::Start]
    }

    pub fn end(&self) -> usize {
        self.index[&Token::End]
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::standard()
    }
}

/// One element of a GUI tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Node {
    pub kind: Element,
    pub children: Vec<Node>,
}

impl Node {
    pub fn leaf(kind: Element) -> Self {
        Self {
            kind,
            children: Vec::new(),
        }
    }

    pub fn container(kind: Element, children: Vec<Node>) -> Self {
        Self { kind, children }
    }

    fn count(&self) -> usize {
        1 + self.children.iter().map(Node::count).sum::<usize>()
    }
}

/// Parsed GUI: the implicit root holds an optional header followed by rows.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct GuiAst {
    pub children: Vec<Node>,
}

impl GuiAst {
    pub fn new(children: Vec<Node>) -> Self {
        Self { children }
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    /// Number of element nodes, excluding the implicit root.
    pub fn node_count(&self) -> usize {
        self.children.iter().map(Node::count).sum()
    }

    /// Checks every containment rule.
    pub fn validate(&self) -> Result<(), DslError> {
        for (i, child) in self.children.iter().enumerate() {
            check_root_child(i, child.kind)?;
            validate_node(child)?;
        }
        Ok(())
    }

    pub fn header(&self) -> Option<&Node> {
        self.children.first().filter(|n| n.kind == Element::Header)
    }

    pub fn rows(&self) -> impl Iterator<Item = &Node> {
        self.children.iter().filter(|n| n.kind == Element::Row)
    }
}

fn check_root_child(index: usize, kind: Element) -> Result<(), DslError> {
    let ok = match kind {
        Element::Header => index == 0,
        Element::Row => true,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(DslError::IllegalChild {
            parent: "root".into(),
            child: kind.as_str().into(),
        })
    }
}

fn validate_node(node: &Node) -> Result<(), DslError> {
    if node.kind.is_leaf() && !node.children.is_empty() {
        return Err(DslError::IllegalChild {
            parent: node.kind.as_str().into(),
            child: node.children[0].kind.as_str().into(),
        });
    }
    for child in &node.children {
        if !node.kind.admits(child.kind) {
            return Err(DslError::IllegalChild {
                parent: node.kind.as_str().into(),
                child: child.kind.as_str().into(),
            });
        }
        validate_node(child)?;
    }
    Ok(())
}

/// Splits DSL source on whitespace; braces and commas are standalone tokens.
pub fn tokenize(text: &str) -> Result<Vec<Token>, DslError> {
    let mut tokens = Vec::new();
    let mut word_start: Option<usize> = None;

    let flush = |start: Option<usize>, end: usize, tokens: &mut Vec<Token>| {
        if let Some(s) = start {
            let lexeme = &text[s..end];
            match lexeme.parse::<Element>() {
                Ok(e) => tokens.push(Token::Element(e)),
                Err(()) => {
                    return Err(DslError::UnknownSymbol {
                        position: s,
                        lexeme: lexeme.to_string(),
                    })
                }
            }
        }
        Ok(())
    };

    for (pos, ch) in text.char_indices() {
        let punct = match ch {
            '{' => Some(Token::Open),
            '}' => Some(Token::Close),
            ',' => Some(Token::Comma),
            _ => None,
        };
        if ch.is_whitespace() || punct.is_some() {
            flush(word_start.take(), pos, &mut tokens)?;
            if let Some(t) = punct {
                tokens.push(t);
            }
        } else if word_start.is_none() {
            word_start = Some(pos);
        }
    }
    flush(word_start, text.len(), &mut tokens)?;
    Ok(tokens)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<Token> {
        self.tokens.get(self.pos).copied()
    }

    fn unexpected(&self, token: Token) -> DslError {
        DslError::UnexpectedToken {
            position: self.pos,
            token,
        }
    }

    fn element(&mut self) -> Result<Element, DslError> {
        match self.peek() {
            Some(Token::Element(e)) => {
                self.pos += 1;
                Ok(e)
            }
            Some(Token::Close) => Err(DslError::UnbalancedBraces { position: self.pos }),
            Some(t) => Err(self.unexpected(t)),
            None => Err(DslError::UnbalancedBraces { position: self.pos }),
        }
    }

    /// Parses `kind { children }` for containers or a bare leaf.
    fn node(&mut self, parent: Option<Element>) -> Result<Node, DslError> {
        let kind = self.element()?;
        match parent {
            Some(p) if !p.admits(kind) => {
                return Err(DslError::IllegalChild {
                    parent: p.as_str().into(),
                    child: kind.as_str().into(),
                })
            }
            _ => {}
        }
        if kind.is_leaf() {
            if self.peek() == Some(Token::Open) {
                return Err(self.unexpected(Token::Open));
            }
            return Ok(Node::leaf(kind));
        }

        let open_at = self.pos;
        match self.peek() {
            Some(Token::Open) => self.pos += 1,
            Some(t) => return Err(self.unexpected(t)),
            None => return Err(DslError::UnbalancedBraces { position: self.pos }),
        }

        let mut children = Vec::new();
        loop {
            match self.peek() {
                None => return Err(DslError::UnbalancedBraces { position: open_at }),
                Some(Token::Close) => {
                    self.pos += 1;
                    return Ok(Node::container(kind, children));
                }
                Some(Token::Comma) if kind.holds_leaves() && !children.is_empty() => {
                    self.pos += 1;
                    // a comma must be followed by another sibling
                    match self.peek() {
                        Some(Token::Element(_)) => children.push(self.node(Some(kind))?),
                        Some(t) => return Err(self.unexpected(t)),
                        None => return Err(DslError::UnbalancedBraces { position: open_at }),
                    }
                }
                Some(Token::Element(_)) if children.is_empty() || !kind.holds_leaves() => {
                    children.push(self.node(Some(kind))?);
                }
                Some(t) => return Err(self.unexpected(t)),
            }
        }
    }
}

/// Builds a tree from tokens, enforcing brace matching and containment rules.
pub fn parse(tokens: &[Token]) -> Result<GuiAst, DslError> {
    let mut parser = Parser { tokens, pos: 0 };
    let mut children = Vec::new();
    while let Some(tok) = parser.peek() {
        match tok {
            Token::Element(kind) => {
                check_root_child(children.len(), kind)?;
                children.push(parser.node(None)?);
            }
            Token::Close | Token::Open => {
                return Err(DslError::UnbalancedBraces {
                    position: parser.pos,
                })
            }
            t => return Err(parser.unexpected(t)),
        }
    }
    Ok(GuiAst { children })
}

/// Convenience for `parse(&tokenize(text)?)`.
pub fn parse_str(text: &str) -> Result<GuiAst, DslError> {
    parse(&tokenize(text)?)
}

/// Flattens a tree into its canonical token sequence.
pub fn to_tokens(ast: &GuiAst) -> Vec<Token> {
    fn walk(node: &Node, out: &mut Vec<Token>) {
        out.push(Token::Element(node.kind));
        if node.kind.is_container() {
            out.push(Token::Open);
            for (i, child) in node.children.iter().enumerate() {
                if i > 0 && node.kind.holds_leaves() {
                    out.push(Token::Comma);
                }
                walk(child, out);
            }
            out.push(Token::Close);
        }
    }
    let mut out = Vec::new();
    for child in &ast.children {
        walk(child, &mut out);
    }
    out
}

/// Canonical text: tokens joined by single spaces.
pub fn serialize(ast: &GuiAst) -> String {
    join_tokens(&to_tokens(ast))
}

pub fn join_tokens(tokens: &[Token]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_str());
    }
    out
}

/// One-hot vector of length `vocab.len()`.
pub fn encode_one_hot<T: Float>(token: Token, vocab: &Vocabulary) -> Result<Vec<T>, DslError> {
    let idx = vocab
        .index_of(token)
        .ok_or_else(|| DslError::UnknownSymbol {
            position: 0,
            lexeme: token.as_str().to_string(),
        })?;
    let mut v = vec![T::zero(); vocab.len()];
    v[idx] = T::one();
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Element::*;

    fn tok(e: Element) -> Token {
        Token::Element(e)
    }

    #[test]
    fn vocabulary_is_bijective_and_sized() {
        let v = Vocabulary::standard();
        assert_eq!(v.len(), 18);
        for (i, &t) in v.symbols().iter().enumerate() {
            assert_eq!(v.index_of(t), Some(i));
            assert_eq!(v.token(i), Some(t));
        }
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("").unwrap(), vec![]);
        assert_eq!(
            tokenize("header { btn-active }").unwrap(),
            vec![tok(Header), Token::Open, tok(BtnActive), Token::Close]
        );
        assert_eq!(
            tokenize("header{btn-active,btn-inactive}").unwrap(),
            vec![
                tok(Header),
                Token::Open,
                tok(BtnActive),
                Token::Comma,
                tok(BtnInactive),
                Token::Close
            ]
        );
        match tokenize("header { bogus }") {
            Err(DslError::UnknownSymbol { position, lexeme }) => {
                assert_eq!(lexeme, "bogus");
                assert_eq!(position, 9);
            }
            other => panic!("{other:?}"),
        }
        assert!(tokenize("<START>").is_err());
    }

    #[test]
    fn parse_examples() {
        let ast = parse(&[tok(Header), Token::Open, tok(BtnActive), Token::Close]).unwrap();
        assert_eq!(
            ast,
            GuiAst::new(vec![Node::container(Header, vec![Node::leaf(BtnActive)])])
        );
        assert!(matches!(
            parse(&[tok(Header), Token::Open]),
            Err(DslError::UnbalancedBraces { .. })
        ));
        assert_eq!(parse(&[]).unwrap(), GuiAst::default());
        assert!(matches!(
            parse(&[Token::Close]),
            Err(DslError::UnbalancedBraces { .. })
        ));
    }

    #[test]
    fn parse_rejects_illegal_children() {
        let err = parse_str("header { btn-green }").unwrap_err();
        assert_eq!(
            err,
            DslError::IllegalChild {
                parent: "header".into(),
                child: "btn-green".into()
            }
        );
        assert!(matches!(
            parse_str("row { text }"),
            Err(DslError::IllegalChild { .. })
        ));
        assert!(matches!(
            parse_str("row { single { text } } header { btn-active }"),
            Err(DslError::IllegalChild { .. })
        ));
        assert!(matches!(
            parse_str("text"),
            Err(DslError::IllegalChild { .. })
        ));
        assert!(matches!(
            parse_str("row { single { text { } } }"),
            Err(DslError::UnexpectedToken {
                token: Token::Open,
                ..
            })
        ));
    }

    #[test]
    fn parse_enforces_commas_between_leaves() {
        assert!(parse_str("header { btn-active btn-inactive }").is_err());
        assert!(parse_str("header { btn-active , }").is_err());
        assert!(parse_str("header { , btn-active }").is_err());
        assert!(parse_str("row { single { text } , single { text } }").is_err());
        assert!(parse_str("header { btn-active , btn-inactive }").is_ok());
    }

    #[test]
    fn serialize_examples() {
        assert_eq!(serialize(&GuiAst::default()), "");
        let h = GuiAst::new(vec![Node::container(Header, vec![Node::leaf(BtnActive)])]);
        assert_eq!(serialize(&h), "header { btn-active }");
        let r = GuiAst::new(vec![Node::container(
            Row,
            vec![Node::container(Single, vec![Node::leaf(Text)])],
        )]);
        assert_eq!(serialize(&r), "row { single { text } }");
        let two = GuiAst::new(vec![Node::container(
            Header,
            vec![Node::leaf(BtnActive), Node::leaf(BtnInactive)],
        )]);
        assert_eq!(serialize(&two), "header { btn-active , btn-inactive }");
    }

    #[test]
    fn one_hot_examples() {
        let v = Vocabulary::from_symbols(vec![Token::Pad, Token::Start, Token::End, Token::Open]);
        assert_eq!(
            encode_one_hot::<f64>(Token::Pad, &v).unwrap(),
            vec![1.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(
            encode_one_hot::<f64>(Token::Open, &v).unwrap(),
            vec![0.0, 0.0, 0.0, 1.0]
        );
        assert!(encode_one_hot::<f64>(Token::Close, &v).is_err());

        let std = Vocabulary::standard();
        let mut total = vec![0.0f64; std.len()];
        for (i, &t) in std.symbols().iter().enumerate() {
            let oh = encode_one_hot::<f64>(t, &std).unwrap();
            assert_eq!(oh.iter().sum::<f64>(), 1.0);
            for (j, &u) in std.symbols().iter().enumerate() {
                let other = encode_one_hot::<f64>(u, &std).unwrap();
                let dot: f64 = oh.iter().zip(&other).map(|(a, b)| a * b).sum();
                assert_eq!(dot, if i == j { 1.0 } else { 0.0 });
            }
            for (acc, x) in total.iter_mut().zip(oh) {
                *acc += x;
            }
        }
        assert!(total.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn node_count_excludes_root() {
        let ast =
            parse_str("header { btn-active } row { double { text } double { btn-red } }").unwrap();
        assert_eq!(ast.node_count(), 7);
        ast.validate().unwrap();
    }
}
