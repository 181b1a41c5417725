//! Token-level prefix tree over the sentence inventory, and the walker that
//! drives constrained decoding of one reference part.
//!
//! Every root-to-leaf-marker path spells the tokenization of exactly one
//! inventory sentence. The walker only offers tokens that keep at least one
//! unused sentence reachable, so a sentence is cited at most once per
//! reference part.
//!
//! A node can carry a leaf marker and still have children when one
//! sentence's tokens are a strict prefix of another's. The walker never
//! commits such an interior marker on its own: the decoder either continues
//! into a child or picks a post-leaf token (next sentence start or the
//! closing tag), which commits the shorter sentence first. When a token is
//! both a child and a next-sentence start, continuation wins; the explicit
//! [`Walker::commit_leaf`] covers the other reading.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::passage::SentenceRef;
use crate::textproc::{normalize, SentenceSpan};
use crate::tokenizer::{SpecialToken, TokenId, TokenizeError, Tokenizer};
use crate::answer::Tag;

pub type NodeId = usize;
pub type LeafId = usize;

const ROOT: NodeId = 0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrieError {
    #[error("cannot build a prefix tree from an empty inventory")]
    EmptyInventory,
    #[error("sentence {0} encodes to zero tokens")]
    EmptySentence(SentenceRef),
    #[error("sentence {0} contains a reserved tag or end-of-sequence token")]
    ReservedToken(SentenceRef),
    #[error("tokenizing sentence {0}: {1}")]
    Tokenize(SentenceRef, TokenizeError),
    #[error("token {token} is not a valid continuation at node {node}")]
    ConstraintViolation { token: TokenId, node: NodeId },
    #[error("walker state is inconsistent with the tree: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone)]
struct Node {
    children: BTreeMap<TokenId, NodeId>,
    leaf: Option<LeafId>,
    /// Leaves at or below this node.
    subtree: Vec<LeafId>,
}

impl Node {
    fn new() -> Self {
        Self {
            children: BTreeMap::new(),
            leaf: None,
            subtree: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Leaf {
    pub sentence: SentenceRef,
    pub tokens: Vec<TokenId>,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct PrefixTree {
    nodes: Vec<Node>,
    leaves: Vec<Leaf>,
    tokenizer_name: String,
}

/// Builds the tree over the normalized text of every inventory sentence.
pub fn build_prefix_tree(inventory: &[SentenceSpan], tokenizer: &dyn Tokenizer) -> Result<PrefixTree, TrieError> {
    let reserved: Vec<TokenId> = std::iter::once(tokenizer.special(SpecialToken::Eos))
        .chain(Tag::ALL.map(|t| tokenizer.tag_id(t)))
        .collect();
    let mut seqs = Vec::with_capacity(inventory.len());
    for span in inventory {
        let sentence = SentenceRef::new(&span.passage_id, span.index);
        let text = normalize(&span.text);
        let ids = tokenizer
            .encode(&text)
            .map_err(|e| TrieError::Tokenize(sentence.clone(), e))?
            .ids;
        if ids.iter().any(|id| reserved.contains(id)) {
            return Err(TrieError::ReservedToken(sentence));
        }
        seqs.push((sentence, ids, text));
    }
    PrefixTree::from_sequences(tokenizer.name(), seqs)
}

impl PrefixTree {
    /// Builds from pre-tokenized sentences. Identical token sequences share
    /// one leaf; the first occurrence names it.
    pub fn from_sequences(
        tokenizer_name: &str,
        sequences: impl IntoIterator<Item = (SentenceRef, Vec<TokenId>, String)>,
    ) -> Result<Self, TrieError> {
        let mut tree = Self {
            nodes: vec![Node::new()],
            leaves: Vec::new(),
            tokenizer_name: tokenizer_name.to_owned(),
        };
        let mut any = false;
        for (sentence, tokens, text) in sequences {
            any = true;
            if tokens.is_empty() {
                return Err(TrieError::EmptySentence(sentence));
            }
            let mut path = vec![ROOT];
            let mut node = ROOT;
            for &tok in &tokens {
                node = match tree.nodes[node].children.get(&tok) {
                    Some(&child) => child,
                    None => {
                        tree.nodes.push(Node::new());
                        let child = tree.nodes.len() - 1;
                        tree.nodes[node].children.insert(tok, child);
                        child
                    }
                };
                path.push(node);
            }
            if tree.nodes[node].leaf.is_some() {
                continue;
            }
            let leaf = tree.leaves.len();
            tree.leaves.push(Leaf { sentence, tokens, text });
            tree.nodes[node].leaf = Some(leaf);
            for n in path {
                tree.nodes[n].subtree.push(leaf);
            }
        }
        if !any {
            return Err(TrieError::EmptyInventory);
        }
        Ok(tree)
    }

    pub fn tokenizer_name(&self) -> &str {
        &self.tokenizer_name
    }

    pub fn leaves(&self) -> &[Leaf] {
        &self.leaves
    }

    pub fn leaf(&self, id: LeafId) -> &Leaf {
        &self.leaves[id]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn root_tokens(&self) -> Vec<TokenId> {
        self.nodes[ROOT].children.keys().copied().collect()
    }

    /// Node reached from the root by `tokens`, if any.
    pub fn lookup(&self, tokens: &[TokenId]) -> Option<NodeId> {
        tokens
            .iter()
            .try_fold(ROOT, |n, t| self.nodes[n].children.get(t).copied())
    }

    pub fn children(&self, node: NodeId) -> Vec<TokenId> {
        self.nodes[node].children.keys().copied().collect()
    }

    pub fn leaf_at(&self, node: NodeId) -> Option<LeafId> {
        self.nodes[node].leaf
    }

    /// One line per leaf: `passage_id/index<TAB>token ids<TAB>text`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for leaf in &self.leaves {
            let ids: Vec<String> = leaf.tokens.iter().map(ToString::to_string).collect();
            let _ = writeln!(out, "{}\t{}\t{}", leaf.sentence, ids.join(" "), leaf.text);
        }
        out
    }

    pub fn walker(&self) -> Walker<'_> {
        Walker::new(self)
    }
}

/// Session-local cursor over a [`PrefixTree`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkerState {
    pub cursor: NodeId,
    /// Tokens since the last reset to the root.
    pub emitted: Vec<TokenId>,
    pub completed: Vec<LeafId>,
    pub used: BTreeSet<LeafId>,
}

impl WalkerState {
    fn fresh() -> Self {
        Self {
            cursor: ROOT,
            emitted: Vec::new(),
            completed: Vec::new(),
            used: BTreeSet::new(),
        }
    }
}

/// What taking a token does, as decided by [`Walker::classify`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    /// Step into a child of the cursor.
    Continue,
    /// Commit the cursor's leaf marker, then start the next sentence.
    CommitAndStart,
    /// Commit any pending leaf marker and close the reference.
    Close,
}

#[derive(Debug, Clone)]
pub struct Walker<'t> {
    tree: &'t PrefixTree,
    state: WalkerState,
}

impl<'t> Walker<'t> {
    pub fn new(tree: &'t PrefixTree) -> Self {
        Self {
            tree,
            state: WalkerState::fresh(),
        }
    }

    /// Resumes from a saved state after checking it against the tree.
    pub fn from_state(tree: &'t PrefixTree, state: WalkerState) -> Result<Self, TrieError> {
        let bad = |m: &str| Err(TrieError::Invariant(m.to_owned()));
        if tree.lookup(&state.emitted) != Some(state.cursor) {
            return bad("cursor is not reached by the emitted tokens");
        }
        if state.completed.iter().any(|&l| l >= tree.leaves.len()) {
            return bad("completed sentence outside the inventory");
        }
        if state.completed.iter().copied().collect::<BTreeSet<_>>() != state.used {
            return bad("used set differs from completed sentences");
        }
        Ok(Self { tree, state })
    }

    pub fn state(&self) -> &WalkerState {
        &self.state
    }

    pub fn tree(&self) -> &'t PrefixTree {
        self.tree
    }

    pub fn completed(&self) -> impl Iterator<Item = &'t Leaf> + '_ {
        self.state.completed.iter().map(|&l| &self.tree.leaves[l])
    }

    pub fn completed_refs(&self) -> Vec<SentenceRef> {
        self.completed().map(|l| l.sentence.clone()).collect()
    }

    pub fn at_root(&self) -> bool {
        self.state.cursor == ROOT
    }

    fn has_unused(&self, node: NodeId) -> bool {
        self.tree.nodes[node]
            .subtree
            .iter()
            .any(|l| !self.state.used.contains(l))
    }

    fn usable_children(&self, node: NodeId) -> impl Iterator<Item = (TokenId, NodeId)> + '_ {
        self.tree.nodes[node]
            .children
            .iter()
            .filter(move |(_, &c)| self.has_unused(c))
            .map(|(&t, &c)| (t, c))
    }

    /// Unused leaf marker at the cursor, for an interior node.
    fn pending_leaf(&self) -> Option<LeafId> {
        if self.at_root() {
            return None;
        }
        self.tree.nodes[self.state.cursor]
            .leaf
            .filter(|l| !self.state.used.contains(l))
    }

    /// True when closing the reference (or starting another sentence) is allowed now.
    pub fn at_sentence_boundary(&self) -> bool {
        (self.at_root() && !self.state.completed.is_empty()) || self.pending_leaf().is_some()
    }

    /// True when no unused sentence remains.
    pub fn exhausted(&self) -> bool {
        !self.has_unused(ROOT)
    }

    /// Tokens that may follow the current state.
    ///
    /// Mid-path this is the cursor's children that still lead to an unused
    /// sentence. At a sentence boundary it also includes the first tokens of
    /// unused sentences and `closing_token`. A fresh walker offers only
    /// sentence starts.
    pub fn valid_next_tokens(&self, closing_token: TokenId) -> BTreeSet<TokenId> {
        let mut out: BTreeSet<TokenId> = if self.at_root() {
            BTreeSet::new()
        } else {
            self.usable_children(self.state.cursor).map(|(t, _)| t).collect()
        };
        if self.at_root() || self.at_sentence_boundary() {
            out.extend(self.usable_children_after_commit());
        }
        if self.at_sentence_boundary() {
            out.insert(closing_token);
        }
        out
    }

    /// Root tokens still usable once the pending leaf (if any) is committed.
    fn usable_children_after_commit(&self) -> Vec<TokenId> {
        let pending = self.pending_leaf();
        self.tree.nodes[ROOT]
            .children
            .iter()
            .filter(|(_, &c)| {
                self.tree.nodes[c]
                    .subtree
                    .iter()
                    .any(|l| !self.state.used.contains(l) && Some(*l) != pending)
            })
            .map(|(&t, _)| t)
            .collect()
    }

    pub fn classify(&self, token: TokenId, closing_token: TokenId) -> Option<Move> {
        if !self.at_root() && self.usable_children(self.state.cursor).any(|(t, _)| t == token) {
            return Some(Move::Continue);
        }
        if self.at_sentence_boundary() && token == closing_token {
            return Some(Move::Close);
        }
        if self.at_root() && self.usable_children(ROOT).any(|(t, _)| t == token) {
            return Some(Move::Continue);
        }
        if self.pending_leaf().is_some() && self.usable_children_after_commit().contains(&token) {
            return Some(Move::CommitAndStart);
        }
        None
    }

    fn commit(&mut self, leaf: LeafId) {
        self.state.completed.push(leaf);
        self.state.used.insert(leaf);
        self.state.cursor = ROOT;
        self.state.emitted.clear();
    }

    /// Commits the unused leaf marker at an interior cursor and returns to the root.
    pub fn commit_leaf(&mut self) -> Option<SentenceRef> {
        let leaf = self.pending_leaf()?;
        self.commit(leaf);
        Some(self.tree.leaves[leaf].sentence.clone())
    }

    /// Takes one non-closing token. Reaching a leaf with no children commits
    /// it and resets to the root; returns the committed sentences.
    pub fn advance(&mut self, token: TokenId) -> Result<Vec<SentenceRef>, TrieError> {
        let mut committed = Vec::new();
        let moved = match self.classify(token, TokenId::MAX) {
            Some(Move::Continue) => true,
            Some(Move::CommitAndStart) => {
                committed.extend(self.commit_leaf());
                true
            }
            _ => false,
        };
        let next = moved
            .then(|| self.tree.nodes[self.state.cursor].children.get(&token).copied())
            .flatten()
            .filter(|&c| self.has_unused(c))
            .ok_or(TrieError::ConstraintViolation {
                token,
                node: self.state.cursor,
            })?;
        self.state.cursor = next;
        self.state.emitted.push(token);
        let node = &self.tree.nodes[next];
        if let Some(leaf) = node.leaf {
            if node.children.is_empty() {
                self.commit(leaf);
                committed.push(self.tree.leaves[leaf].sentence.clone());
            }
        }
        Ok(committed)
    }

    /// Ends the reference part, committing a pending interior leaf.
    pub fn close(&mut self) -> Result<Vec<SentenceRef>, TrieError> {
        if !self.at_sentence_boundary() {
            return Err(TrieError::ConstraintViolation {
                token: TokenId::MAX,
                node: self.state.cursor,
            });
        }
        self.commit_leaf();
        Ok(self.completed_refs())
    }

    /// Starts a new reference part: cursor to root, nothing completed or used.
    pub fn reset(&mut self) {
        self.state = WalkerState::fresh();
    }
}

/// Every sequence of at most `max_sentences` distinct sentences a fresh
/// walker can accept as one reference part, explored over all token and
/// leaf-commit choices.
pub fn enumerate_accepted(tree: &PrefixTree, max_sentences: usize) -> BTreeSet<Vec<SentenceRef>> {
    let mut out = BTreeSet::new();
    let mut seen: HashMap<(NodeId, Vec<LeafId>), ()> = HashMap::new();
    let mut stack = vec![tree.walker()];
    while let Some(w) = stack.pop() {
        let key = (w.state.cursor, w.state.completed.clone());
        if seen.insert(key, ()).is_some() {
            continue;
        }
        let done = w.state.completed.len();
        if w.at_sentence_boundary() {
            let mut closed = w.clone();
            if let Ok(refs) = closed.close() {
                if refs.len() <= max_sentences {
                    out.insert(refs);
                }
            }
        }
        if done >= max_sentences {
            continue;
        }
        if w.pending_leaf().is_some() && done + 1 < max_sentences {
            let mut committed = w.clone();
            committed.commit_leaf();
            stack.push(committed);
        }
        let cursor = w.state.cursor;
        let tokens: Vec<TokenId> = w.usable_children(cursor).map(|(t, _)| t).collect();
        for t in tokens {
            let mut next = w.clone();
            if next.advance(t).is_ok() && next.state.completed.len() <= max_sentences {
                stack.push(next);
            }
        }
    }
    out
}
