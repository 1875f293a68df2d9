//! Query evaluation against a single partition.
//!
//! Each term fetches a doc-ordered scored list (`1 + ln(tf)` per posting,
//! in f32 so every stage of the system ranks with identical arithmetic).
//! The operator tree is folded bottom-up with an explicit stack, merging
//! doc-ordered lists pairwise, and the best `limit` hits are selected with
//! a bounded heap instead of a full sort.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::docid::DocId;
use crate::index::{IndexError, SubIndex};
use crate::query::QueryNode;

/// A doc-ordered list of partial scores, the working value during
/// operator folding.
pub type ScoredList = Vec<(DocId, f32)>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredHit {
    pub doc: DocId,
    pub score: f32,
}

/// Ranking order: higher score first, then smaller document id.
pub fn rank_cmp(a: &ScoredHit, b: &ScoredHit) -> Ordering {
    a.score
        .total_cmp(&b.score)
        .then_with(|| b.doc.cmp(&a.doc))
        .reverse()
}

#[derive(Debug, PartialEq)]
struct Ranked(ScoredHit);

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        // Inverted so that a max-heap of `Reverse<Ranked>` pops the worst.
        rank_cmp(&other.0, &self.0)
    }
}

/// Scored postings for one term; absent terms yield an empty list.
pub fn fetch_scored_list(index: &SubIndex, term: &str) -> Result<ScoredList, IndexError> {
    let Some(postings) = index.posting_list(term)? else {
        return Ok(Vec::new());
    };
    Ok(postings
        .into_iter()
        .map(|(doc, tf)| (doc, 1.0 + (tf as f32).ln()))
        .collect())
}

enum Op {
    And,
    Or,
    AndNot,
}

fn combine(op: &Op, left: ScoredList, right: ScoredList) -> ScoredList {
    let mut out = Vec::new();
    let mut l = left.into_iter().peekable();
    let mut r = right.into_iter().peekable();
    loop {
        match (l.peek(), r.peek()) {
            (Some(&(ld, ls)), Some(&(rd, rs))) => match ld.cmp(&rd) {
                Ordering::Equal => {
                    match op {
                        Op::And | Op::Or => out.push((ld, ls + rs)),
                        Op::AndNot => {}
                    }
                    l.next();
                    r.next();
                }
                Ordering::Less => {
                    match op {
                        Op::Or | Op::AndNot => out.push((ld, ls)),
                        Op::And => {}
                    }
                    l.next();
                }
                Ordering::Greater => {
                    if let Op::Or = op {
                        out.push((rd, rs));
                    }
                    r.next();
                }
            },
            (Some(_), None) => {
                match op {
                    Op::Or | Op::AndNot => out.extend(l),
                    Op::And => {}
                }
                break;
            }
            (None, Some(_)) => {
                if let Op::Or = op {
                    out.extend(r);
                }
                break;
            }
            (None, None) => break,
        }
    }
    out
}

/// Folds the query tree into one doc-ordered scored list without
/// recursing (operator chains can be as deep as the query is long).
pub fn evaluate_scored(index: &SubIndex, query: &QueryNode) -> Result<ScoredList, IndexError> {
    enum Frame<'a> {
        Visit(&'a QueryNode),
        Combine(Op),
    }
    let mut work = vec![Frame::Visit(query)];
    let mut values: Vec<ScoredList> = Vec::new();
    while let Some(frame) = work.pop() {
        match frame {
            Frame::Visit(QueryNode::Term(t)) => values.push(fetch_scored_list(index, t)?),
            Frame::Visit(node) => {
                let (op, l, r) = match node {
                    QueryNode::And(l, r) => (Op::And, l, r),
                    QueryNode::Or(l, r) => (Op::Or, l, r),
                    QueryNode::AndNot(l, r) => (Op::AndNot, l, r),
                    QueryNode::Term(_) => unreachable!("terms are handled above"),
                };
                work.push(Frame::Combine(op));
                work.push(Frame::Visit(r));
                work.push(Frame::Visit(l));
            }
            Frame::Combine(op) => {
                let right = values.pop().expect("operand evaluated before combine");
                let left = values.pop().expect("operand evaluated before combine");
                values.push(combine(&op, left, right));
            }
        }
    }
    let result = values.pop().expect("evaluation leaves exactly one value");
    debug_assert!(values.is_empty());
    Ok(result)
}

/// Selects the `limit` best hits with a bounded min-heap.
pub fn top_hits(scored: ScoredList, limit: usize) -> Vec<ScoredHit> {
    if limit == 0 {
        return Vec::new();
    }
    let mut heap: BinaryHeap<Reverse<Ranked>> = BinaryHeap::with_capacity(limit + 1);
    for (doc, score) in scored {
        heap.push(Reverse(Ranked(ScoredHit { doc, score })));
        if heap.len() > limit {
            heap.pop();
        }
    }
    heap.into_sorted_vec()
        .into_iter()
        .map(|Reverse(Ranked(hit))| hit)
        .collect()
}

/// Evaluates a query and returns its ranked top-`limit` hits.
pub fn evaluate(
    index: &SubIndex,
    query: &QueryNode,
    limit: usize,
) -> Result<Vec<ScoredHit>, IndexError> {
    Ok(top_hits(evaluate_scored(index, query)?, limit))
}
