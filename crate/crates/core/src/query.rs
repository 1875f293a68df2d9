//! Ranked boolean query language.
//!
//! Infix `AND`, `OR` and `ANDNOT` (case-insensitive) over terms, with
//! parentheses for grouping. Adjacent terms are an implicit `AND`.
//! `ANDNOT` binds tightest, then `AND`, then `OR`; all operators are
//! left-associative. Term text passes through the index tokenizer, so a
//! query matches exactly what indexing produced.

use thiserror::Error;

use crate::index::tokenize;

/// Parenthesis nesting beyond this depth is rejected.
pub const MAX_QUERY_DEPTH: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryNode {
    Term(String),
    And(Box<QueryNode>, Box<QueryNode>),
    Or(Box<QueryNode>, Box<QueryNode>),
    AndNot(Box<QueryNode>, Box<QueryNode>),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("query holds no terms")]
    Empty,
    #[error("unbalanced parenthesis at byte {0}")]
    UnbalancedParen(usize),
    #[error("operator is missing an operand at byte {0}")]
    DanglingOperator(usize),
    #[error("parentheses nested deeper than {MAX_QUERY_DEPTH} at byte {0}")]
    TooDeep(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    LParen(usize),
    RParen(usize),
    And(usize),
    Or(usize),
    AndNot(usize),
    Term(String, usize),
}

fn lex(input: &str) -> Vec<Tok> {
    let mut toks = Vec::new();
    let mut chars = input.char_indices().peekable();
    while let Some((at, ch)) = chars.next() {
        match ch {
            '(' => toks.push(Tok::LParen(at)),
            ')' => toks.push(Tok::RParen(at)),
            c if c.is_whitespace() => {}
            c => {
                let mut end = at + c.len_utf8();
                while let Some(&(i, next)) = chars.peek() {
                    if next.is_whitespace() || next == '(' || next == ')' {
                        break;
                    }
                    chars.next();
                    end = i + next.len_utf8();
                }
                let word = &input[at..end];
                if word.eq_ignore_ascii_case("and") {
                    toks.push(Tok::And(at));
                } else if word.eq_ignore_ascii_case("or") {
                    toks.push(Tok::Or(at));
                } else if word.eq_ignore_ascii_case("andnot") {
                    toks.push(Tok::AndNot(at));
                } else {
                    toks.extend(tokenize(word).into_iter().map(|t| Tok::Term(t, at)));
                }
            }
        }
    }
    toks
}

pub fn parse_query(input: &str) -> Result<QueryNode, ParseError> {
    let tokens = lex(input);
    if tokens.is_empty() {
        return Err(ParseError::Empty);
    }
    let mut parser = Parser {
        tokens,
        pos: 0,
        eof: input.len(),
    };
    let node = parser.or_expr(0)?;
    match parser.peek() {
        None => Ok(node),
        // The grammar only ever stops early on a `)` it has no opener for.
        Some(Tok::RParen(at)) => Err(ParseError::UnbalancedParen(*at)),
        Some(_) => unreachable!("expressions consume every other token"),
    }
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
    eof: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let tok = self.tokens.get(self.pos).cloned();
        if tok.is_some() {
            self.pos += 1;
        }
        tok
    }

    fn or_expr(&mut self, depth: usize) -> Result<QueryNode, ParseError> {
        let mut left = self.and_expr(depth)?;
        while let Some(Tok::Or(_)) = self.peek() {
            self.next();
            let right = self.and_expr(depth)?;
            left = QueryNode::Or(left.into(), right.into());
        }
        Ok(left)
    }

    fn and_expr(&mut self, depth: usize) -> Result<QueryNode, ParseError> {
        let mut left = self.not_expr(depth)?;
        loop {
            match self.peek() {
                Some(Tok::And(_)) => {
                    self.next();
                }
                // Adjacency: a following term or group is an implicit AND.
                Some(Tok::Term(..)) | Some(Tok::LParen(_)) => {}
                _ => return Ok(left),
            }
            let right = self.not_expr(depth)?;
            left = QueryNode::And(left.into(), right.into());
        }
    }

    fn not_expr(&mut self, depth: usize) -> Result<QueryNode, ParseError> {
        let mut left = self.primary(depth)?;
        while let Some(Tok::AndNot(_)) = self.peek() {
            self.next();
            let right = self.primary(depth)?;
            left = QueryNode::AndNot(left.into(), right.into());
        }
        Ok(left)
    }

    fn primary(&mut self, depth: usize) -> Result<QueryNode, ParseError> {
        match self.next() {
            Some(Tok::Term(term, _)) => Ok(QueryNode::Term(term)),
            Some(Tok::LParen(at)) => {
                if depth >= MAX_QUERY_DEPTH {
                    return Err(ParseError::TooDeep(at));
                }
                let node = self.or_expr(depth + 1)?;
                match self.next() {
                    Some(Tok::RParen(_)) => Ok(node),
                    _ => Err(ParseError::UnbalancedParen(at)),
                }
            }
            Some(Tok::RParen(at)) => Err(ParseError::DanglingOperator(at)),
            Some(Tok::And(at)) | Some(Tok::Or(at)) | Some(Tok::AndNot(at)) => {
                Err(ParseError::DanglingOperator(at))
            }
            None => Err(ParseError::DanglingOperator(self.eof)),
        }
    }
}
