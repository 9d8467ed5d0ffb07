//! Secure holon composition run by a trusted entity.
//!
//! [`Hcfw`] is the trusted entity's state machine: it issues certificates,
//! opens proposals, tallies votes, distributes and rotates composition
//! secrets, and merges compositions. Every operation is synchronous and
//! queues the [`ProtocolMessage`]s and trace events it produces; a driver
//! drains them with [`Hcfw::drain`] and carries the messages over the network.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{CryptoProvider, KeyPair, LedgerCrypto, SecretId};
use crate::dsl::{self, DslError, EvalContext, Expr, LoggedEvent};
use crate::holon::{CapabilityPredicate, HolonError, HolonId, HolonRegistry, Sensation};
use crate::simnet::{LinkQuality, SimNet, Tick};
use crate::trace::{TraceEvent, TraceKind};
use crate::value::Value;
use crate::wire::{Decoder, Encoder, WireError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HcfwError {
    #[error("trusted entity unreachable from `{0}`")]
    TrustedEntityUnreachable(HolonId),
    #[error("unknown holon `{0}`")]
    UnknownHolon(HolonId),
    #[error("candidate `{0}` holds no certificate")]
    UninitializedCandidate(HolonId),
    #[error("initiator `{0}` is not among the candidates")]
    InitiatorNotCandidate(HolonId),
    #[error("invalid voting configuration: {0}")]
    InvalidVoting(String),
    #[error("unknown proposal `{0}`")]
    UnknownProposal(ProposalId),
    #[error("`{holon}` is not a voter on `{proposal}`")]
    NotACandidate { holon: HolonId, proposal: ProposalId },
    #[error("`{holon}` already voted on `{proposal}`")]
    AlreadyVoted { holon: HolonId, proposal: ProposalId },
    #[error("proposal `{proposal}` is {phase}")]
    WrongPhase { proposal: ProposalId, phase: Phase },
    #[error("proposal `{0}` is still collecting votes")]
    VotingOpen(ProposalId),
    #[error("unknown composition `{0}`")]
    UnknownComposition(HolonId),
    #[error("`{holon}` is already a member of `{composition}`")]
    AlreadyMember { composition: HolonId, holon: HolonId },
    #[error("`{holon}` is not a member of `{composition}`")]
    NotAMember { composition: HolonId, holon: HolonId },
    #[error("removing `{0}` would leave its composition empty")]
    LastMember(HolonId),
    #[error("merge of `{a}` and `{b}` rejected")]
    MergeRejected { a: HolonId, b: HolonId },
    #[error(transparent)]
    Registry(#[from] HolonError),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProposalId(pub String);

impl fmt::Display for ProposalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub subject: HolonId,
    pub public_key: Vec<u8>,
    pub issued_at: Tick,
    pub issuer_signature: Vec<u8>,
}

impl Certificate {
    fn signed_bytes(subject: &HolonId, public_key: &[u8], issued_at: Tick) -> Vec<u8> {
        let mut e = Encoder::new();
        e.str(subject.as_str()).bytes(public_key).u64(issued_at);
        e.finish()
    }

    fn encode(&self, e: &mut Encoder) {
        e.str(self.subject.as_str()).bytes(&self.public_key).u64(self.issued_at).bytes(&self.issuer_signature);
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, WireError> {
        Ok(Certificate {
            subject: HolonId::new(d.str()?),
            public_key: d.bytes()?,
            issued_at: d.u64()?,
            issuer_signature: d.bytes()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VotingConfig {
    pub formation_threshold: f64,
    pub change_threshold: f64,
    pub vote_timeout: Tick,
}

impl Default for VotingConfig {
    fn default() -> Self {
        VotingConfig { formation_threshold: 1.0, change_threshold: 0.5, vote_timeout: 10 }
    }
}

impl VotingConfig {
    pub fn validate(&self) -> Result<(), HcfwError> {
        for (name, t) in [("formation_threshold", self.formation_threshold), ("change_threshold", self.change_threshold)] {
            if !(t > 0.0 && t <= 1.0) {
                return Err(HcfwError::InvalidVoting(format!("{name} {t} outside (0, 1]")));
            }
        }
        if self.vote_timeout == 0 {
            return Err(HcfwError::InvalidVoting("vote_timeout must be positive".into()));
        }
        Ok(())
    }
}

/// `yes / voters >= threshold`, with a small slack for thresholds like 0.75 * 4.
pub fn threshold_met(yes: usize, voters: usize, threshold: f64) -> bool {
    voters > 0 && yes as f64 >= threshold * voters as f64 - 1e-9
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Coalition,
    Voting,
    Finalized,
    Rejected,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Coalition => "coalition",
            Phase::Voting => "voting",
            Phase::Finalized => "finalized",
            Phase::Rejected => "rejected",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeKind {
    Add,
    Remove,
}

impl fmt::Display for ChangeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChangeKind::Add => "add",
            ChangeKind::Remove => "remove",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleAction {
    Discover,
    Invite,
    Exclude,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MembershipRule {
    pub condition: Expr,
    pub action: RuleAction,
    pub target_filter: CapabilityPredicate,
}

impl MembershipRule {
    pub fn parse(condition: &str, action: RuleAction, target_filter: CapabilityPredicate) -> Result<Self, DslError> {
        Ok(MembershipRule { condition: dsl::parse(condition)?, action, target_filter })
    }
}

/// Result of one rule firing.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryAction {
    pub rule: usize,
    pub action: RuleAction,
    pub targets: Vec<HolonId>,
    /// Add proposals opened for invited targets.
    pub proposals: Vec<ProposalId>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProposalKind {
    Formation { composition: HolonId },
    Change { composition: HolonId, candidate: HolonId, change: ChangeKind },
    Merge { a: HolonId, b: HolonId, into: HolonId },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub id: ProposalId,
    pub initiator: HolonId,
    pub kind: ProposalKind,
    /// Holons whose vote is counted.
    pub candidates: BTreeSet<HolonId>,
    pub rules: Vec<MembershipRule>,
    pub voting: VotingConfig,
    pub behaviours: BTreeSet<String>,
    pub phase: Phase,
    /// Every phase the proposal has been in, in order.
    pub phase_log: Vec<Phase>,
    pub votes: BTreeMap<HolonId, bool>,
    pub opened_at: Tick,
    /// Formation secret, generated in the coalition phase and released only on success.
    pub secret: Option<SecretId>,
}

impl Proposal {
    fn enter(&mut self, phase: Phase) {
        debug_assert!(phase > self.phase || self.phase_log.is_empty());
        self.phase = phase;
        self.phase_log.push(phase);
    }

    pub fn yes_voters(&self) -> BTreeSet<HolonId> {
        self.votes.iter().filter(|(_, &v)| v).map(|(h, _)| h.clone()).collect()
    }

    pub fn deadline(&self) -> Tick {
        self.opened_at + self.voting.vote_timeout
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositionRecord {
    pub composition_id: HolonId,
    pub members: BTreeSet<HolonId>,
    pub composition_secret: SecretId,
    /// Earlier secrets, oldest first.
    pub retired_secrets: Vec<SecretId>,
    pub rules: Vec<MembershipRule>,
    pub behaviours: BTreeSet<String>,
    pub voting: VotingConfig,
    pub parents: Vec<HolonId>,
}

/// Everything needed to open a formation proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationRequest {
    pub proposal_id: Option<ProposalId>,
    pub composition_id: Option<HolonId>,
    pub initiator: HolonId,
    pub candidates: BTreeSet<HolonId>,
    pub rules: Vec<MembershipRule>,
    pub voting: VotingConfig,
    pub behaviours: BTreeSet<String>,
}

impl FormationRequest {
    pub fn new(initiator: impl Into<HolonId>, candidates: impl IntoIterator<Item = HolonId>) -> Self {
        FormationRequest {
            proposal_id: None,
            composition_id: None,
            initiator: initiator.into(),
            candidates: candidates.into_iter().collect(),
            rules: Vec::new(),
            voting: VotingConfig::default(),
            behaviours: BTreeSet::new(),
        }
    }

    pub fn named(mut self, composition: impl Into<HolonId>) -> Self {
        self.composition_id = Some(composition.into());
        self
    }

    pub fn with_voting(mut self, voting: VotingConfig) -> Self {
        self.voting = voting;
        self
    }

    pub fn with_rules(mut self, rules: Vec<MembershipRule>) -> Self {
        self.rules = rules;
        self
    }

    pub fn with_behaviours<'a>(mut self, names: impl IntoIterator<Item = &'a str>) -> Self {
        self.behaviours = names.into_iter().map(str::to_string).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Formed(CompositionRecord),
    Rejected { proposal: ProposalId, yes: usize, voters: usize },
    Changed { composition: HolonId, accepted: bool },
    Merged(CompositionRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub enum MessageBody {
    CertRequest,
    CertGrant { certificate: Certificate },
    ProposalSubmit { proposal: ProposalId, candidates: BTreeSet<HolonId> },
    SecretDistribute { composition: HolonId, secret: SecretId },
    VoteRequest { proposal: ProposalId },
    VoteCast { proposal: ProposalId, yes: bool },
    CompositionFinalized { proposal: ProposalId, composition: HolonId, members: BTreeSet<HolonId>, secret: SecretId },
    CompositionRejected { proposal: ProposalId },
    MemberChangeProposal { proposal: ProposalId, composition: HolonId, candidate: HolonId, change: ChangeKind },
    MemberChangeResult { proposal: ProposalId, composition: HolonId, accepted: bool, secret: Option<SecretId> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolMessage {
    pub sender: HolonId,
    pub recipient: HolonId,
    pub body: MessageBody,
}

impl ProtocolMessage {
    pub fn name(&self) -> &'static str {
        match self.body {
            MessageBody::CertRequest => "CertRequest",
            MessageBody::CertGrant { .. } => "CertGrant",
            MessageBody::ProposalSubmit { .. } => "ProposalSubmit",
            MessageBody::SecretDistribute { .. } => "SecretDistribute",
            MessageBody::VoteRequest { .. } => "VoteRequest",
            MessageBody::VoteCast { .. } => "VoteCast",
            MessageBody::CompositionFinalized { .. } => "CompositionFinalized",
            MessageBody::CompositionRejected { .. } => "CompositionRejected",
            MessageBody::MemberChangeProposal { .. } => "MemberChangeProposal",
            MessageBody::MemberChangeResult { .. } => "MemberChangeResult",
        }
    }

    /// The composition secret this message travels under, if any. Only
    /// traffic issued after a composition exists is sealed.
    pub fn sealed_under(&self) -> Option<SecretId> {
        match &self.body {
            MessageBody::CompositionFinalized { secret, .. } => Some(*secret),
            MessageBody::MemberChangeResult { secret, .. } => *secret,
            _ => None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        let tag = match &self.body {
            MessageBody::CertRequest => 0,
            MessageBody::CertGrant { .. } => 1,
            MessageBody::ProposalSubmit { .. } => 2,
            MessageBody::SecretDistribute { .. } => 3,
            MessageBody::VoteRequest { .. } => 4,
            MessageBody::VoteCast { .. } => 5,
            MessageBody::CompositionFinalized { .. } => 6,
            MessageBody::CompositionRejected { .. } => 7,
            MessageBody::MemberChangeProposal { .. } => 8,
            MessageBody::MemberChangeResult { .. } => 9,
        };
        e.u8(tag).str(self.sender.as_str()).str(self.recipient.as_str());
        match &self.body {
            MessageBody::CertRequest => {}
            MessageBody::CertGrant { certificate } => certificate.encode(&mut e),
            MessageBody::ProposalSubmit { proposal, candidates } => {
                e.str(&proposal.0).strs(candidates.iter().map(HolonId::as_str));
            }
            MessageBody::SecretDistribute { composition, secret } => {
                e.str(composition.as_str()).u64(secret.0);
            }
            MessageBody::VoteRequest { proposal } => {
                e.str(&proposal.0);
            }
            MessageBody::VoteCast { proposal, yes } => {
                e.str(&proposal.0).bool(*yes);
            }
            MessageBody::CompositionFinalized { proposal, composition, members, secret } => {
                e.str(&proposal.0).str(composition.as_str()).strs(members.iter().map(HolonId::as_str)).u64(secret.0);
            }
            MessageBody::CompositionRejected { proposal } => {
                e.str(&proposal.0);
            }
            MessageBody::MemberChangeProposal { proposal, composition, candidate, change } => {
                e.str(&proposal.0).str(composition.as_str()).str(candidate.as_str()).u8(*change as u8);
            }
            MessageBody::MemberChangeResult { proposal, composition, accepted, secret } => {
                e.str(&proposal.0).str(composition.as_str()).bool(*accepted);
                match secret {
                    Some(s) => e.bool(true).u64(s.0),
                    None => e.bool(false),
                };
            }
        }
        e.frame()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Decoder::frame(bytes)?;
        let tag = d.u8()?;
        let sender = HolonId::new(d.str()?);
        let recipient = HolonId::new(d.str()?);
        let ids = |d: &mut Decoder<'_>| -> Result<BTreeSet<HolonId>, WireError> {
            Ok(d.strs()?.into_iter().map(HolonId::new).collect())
        };
        let body = match tag {
            0 => MessageBody::CertRequest,
            1 => MessageBody::CertGrant { certificate: Certificate::decode(&mut d)? },
            2 => MessageBody::ProposalSubmit { proposal: ProposalId(d.str()?), candidates: ids(&mut d)? },
            3 => MessageBody::SecretDistribute { composition: HolonId::new(d.str()?), secret: SecretId(d.u64()?) },
            4 => MessageBody::VoteRequest { proposal: ProposalId(d.str()?) },
            5 => MessageBody::VoteCast { proposal: ProposalId(d.str()?), yes: d.bool()? },
            6 => MessageBody::CompositionFinalized {
                proposal: ProposalId(d.str()?),
                composition: HolonId::new(d.str()?),
                members: ids(&mut d)?,
                secret: SecretId(d.u64()?),
            },
            7 => MessageBody::CompositionRejected { proposal: ProposalId(d.str()?) },
            8 => MessageBody::MemberChangeProposal {
                proposal: ProposalId(d.str()?),
                composition: HolonId::new(d.str()?),
                candidate: HolonId::new(d.str()?),
                change: match d.u8()? {
                    0 => ChangeKind::Add,
                    1 => ChangeKind::Remove,
                    other => return Err(WireError::UnknownTag(other)),
                },
            },
            9 => MessageBody::MemberChangeResult {
                proposal: ProposalId(d.str()?),
                composition: HolonId::new(d.str()?),
                accepted: d.bool()?,
                secret: if d.bool()? { Some(SecretId(d.u64()?)) } else { None },
            },
            other => return Err(WireError::UnknownTag(other)),
        };
        d.end()?;
        Ok(ProtocolMessage { sender, recipient, body })
    }
}

/// The trusted entity.
#[derive(Debug)]
pub struct Hcfw<C: CryptoProvider = LedgerCrypto> {
    te: HolonId,
    crypto: C,
    te_keys: KeyPair,
    keys: BTreeMap<HolonId, KeyPair>,
    certificates: BTreeMap<HolonId, Certificate>,
    proposals: BTreeMap<ProposalId, Proposal>,
    compositions: BTreeMap<HolonId, CompositionRecord>,
    next_proposal: u64,
    next_composition: u64,
    outbox: Vec<ProtocolMessage>,
    events: Vec<TraceEvent>,
}

impl Hcfw<LedgerCrypto> {
    pub fn with_ledger(te: impl Into<HolonId>) -> Self {
        Hcfw::new(te, LedgerCrypto::new())
    }
}

impl<C: CryptoProvider> Hcfw<C> {
    pub fn new(te: impl Into<HolonId>, mut crypto: C) -> Self {
        let te = te.into();
        let te_keys = crypto.generate_keypair(&te);
        Hcfw {
            te,
            crypto,
            te_keys,
            keys: BTreeMap::new(),
            certificates: BTreeMap::new(),
            proposals: BTreeMap::new(),
            compositions: BTreeMap::new(),
            next_proposal: 0,
            next_composition: 0,
            outbox: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn trusted_entity(&self) -> &HolonId {
        &self.te
    }

    pub fn crypto(&self) -> &C {
        &self.crypto
    }

    pub fn public_key(&self) -> &[u8] {
        &self.te_keys.public
    }

    pub fn proposal(&self, id: &ProposalId) -> Option<&Proposal> {
        self.proposals.get(id)
    }

    pub fn proposals(&self) -> impl Iterator<Item = &Proposal> {
        self.proposals.values()
    }

    pub fn composition(&self, id: &HolonId) -> Option<&CompositionRecord> {
        self.compositions.get(id)
    }

    pub fn compositions(&self) -> impl Iterator<Item = &CompositionRecord> {
        self.compositions.values()
    }

    pub fn certificate(&self, holon: &HolonId) -> Option<&Certificate> {
        self.certificates.get(holon)
    }

    /// Takes the queued outgoing messages and trace events.
    pub fn drain(&mut self) -> (Vec<ProtocolMessage>, Vec<TraceEvent>) {
        (std::mem::take(&mut self.outbox), std::mem::take(&mut self.events))
    }

    fn send(&mut self, recipient: &HolonId, body: MessageBody) {
        self.outbox.push(ProtocolMessage { sender: self.te.clone(), recipient: recipient.clone(), body });
    }

    fn record(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    pub fn allocate_proposal_id(&mut self) -> ProposalId {
        self.next_proposal += 1;
        ProposalId(format!("p{}", self.next_proposal))
    }

    fn allocate_composition_id(&mut self) -> HolonId {
        loop {
            self.next_composition += 1;
            let id = HolonId::new(format!("comp{}", self.next_composition));
            if !self.compositions.contains_key(&id) {
                return id;
            }
        }
    }

    /// Issues a fresh keypair and certificate. Requires the link between the
    /// holon and the trusted entity to be up; a later call supersedes the
    /// earlier certificate.
    pub fn initialize<M: Clone>(&mut self, net: &SimNet<M>, holon: &HolonId) -> Result<Certificate, HcfwError> {
        if !net.has_node(holon.as_str()) {
            return Err(HcfwError::UnknownHolon(holon.clone()));
        }
        if net.link(holon.as_str(), self.te.as_str()).quality == LinkQuality::Down {
            self.record(
                TraceEvent::new(net.now(), TraceKind::InitFailed).with("holon", holon).with("reason", "unreachable"),
            );
            return Err(HcfwError::TrustedEntityUnreachable(holon.clone()));
        }
        let keys = self.crypto.generate_keypair(holon);
        let now = net.now();
        let signed = Certificate::signed_bytes(holon, &keys.public, now);
        let certificate = Certificate {
            subject: holon.clone(),
            public_key: keys.public.clone(),
            issued_at: now,
            issuer_signature: self.crypto.sign(&self.te_keys, &signed),
        };
        self.keys.insert(holon.clone(), keys);
        self.certificates.insert(holon.clone(), certificate.clone());
        self.send(holon, MessageBody::CertGrant { certificate: certificate.clone() });
        self.record(
            TraceEvent::new(now, TraceKind::CertIssued)
                .with("holon", holon)
                .with("key", crate::wire::digest(&certificate.public_key)),
        );
        Ok(certificate)
    }

    /// Valid signature by this trusted entity and not superseded.
    pub fn verify_certificate(&self, certificate: &Certificate) -> bool {
        let signed = Certificate::signed_bytes(&certificate.subject, &certificate.public_key, certificate.issued_at);
        self.crypto.verify(&self.te_keys.public, &signed, &certificate.issuer_signature)
            && self.certificates.get(&certificate.subject) == Some(certificate)
    }

    fn require_certificate(&self, holon: &HolonId) -> Result<(), HcfwError> {
        if self.certificates.contains_key(holon) {
            Ok(())
        } else {
            Err(HcfwError::UninitializedCandidate(holon.clone()))
        }
    }

    /// Coalition phase: generates the (unreleased) composition secret, asks
    /// every candidate for a vote and moves the proposal to voting.
    pub fn propose_composition(
        &mut self,
        registry: &HolonRegistry,
        now: Tick,
        request: FormationRequest,
    ) -> Result<ProposalId, HcfwError> {
        request.voting.validate()?;
        for c in &request.candidates {
            if !registry.contains(c) {
                return Err(HcfwError::UnknownHolon(c.clone()));
            }
        }
        if !request.candidates.contains(&request.initiator) {
            return Err(HcfwError::InitiatorNotCandidate(request.initiator.clone()));
        }
        for c in &request.candidates {
            self.require_certificate(c)?;
        }
        let id = match request.proposal_id {
            Some(id) => id,
            None => self.allocate_proposal_id(),
        };
        let composition = match request.composition_id {
            Some(c) => c,
            None => self.allocate_composition_id(),
        };
        let secret = self.crypto.generate_secret();
        let mut proposal = Proposal {
            id: id.clone(),
            initiator: request.initiator.clone(),
            kind: ProposalKind::Formation { composition: composition.clone() },
            candidates: request.candidates,
            rules: request.rules,
            voting: request.voting,
            behaviours: request.behaviours,
            phase: Phase::Coalition,
            phase_log: Vec::new(),
            votes: BTreeMap::new(),
            opened_at: now,
            secret: Some(secret),
        };
        proposal.enter(Phase::Coalition);
        self.record(
            TraceEvent::new(now, TraceKind::ProposalCreated)
                .with("candidates", join(&proposal.candidates))
                .with("composition", &composition)
                .with("initiator", &proposal.initiator)
                .with("kind", "formation")
                .with("proposal", &id),
        );
        for c in proposal.candidates.clone() {
            self.send(&c, MessageBody::VoteRequest { proposal: id.clone() });
        }
        proposal.enter(Phase::Voting);
        self.proposals.insert(id.clone(), proposal);
        Ok(id)
    }

    /// Opens a vote among the current members on adding or removing `candidate`.
    pub fn propose_member_change(
        &mut self,
        now: Tick,
        composition: &HolonId,
        candidate: &HolonId,
        change: ChangeKind,
    ) -> Result<ProposalId, HcfwError> {
        let record = self.compositions.get(composition).ok_or_else(|| HcfwError::UnknownComposition(composition.clone()))?;
        match change {
            ChangeKind::Add => {
                if record.members.contains(candidate) {
                    return Err(HcfwError::AlreadyMember { composition: composition.clone(), holon: candidate.clone() });
                }
                self.require_certificate(candidate)?;
            }
            ChangeKind::Remove => {
                if !record.members.contains(candidate) {
                    return Err(HcfwError::NotAMember { composition: composition.clone(), holon: candidate.clone() });
                }
                if record.members.len() == 1 {
                    return Err(HcfwError::LastMember(composition.clone()));
                }
            }
        }
        let voters = record.members.clone();
        let voting = record.voting;
        let id = self.allocate_proposal_id();
        let initiator = voters.iter().next().expect("members non-empty").clone();
        let mut proposal = Proposal {
            id: id.clone(),
            initiator,
            kind: ProposalKind::Change { composition: composition.clone(), candidate: candidate.clone(), change },
            candidates: voters,
            rules: Vec::new(),
            voting,
            behaviours: BTreeSet::new(),
            phase: Phase::Coalition,
            phase_log: Vec::new(),
            votes: BTreeMap::new(),
            opened_at: now,
            secret: None,
        };
        proposal.enter(Phase::Coalition);
        self.record(
            TraceEvent::new(now, TraceKind::ProposalCreated)
                .with("candidate", candidate)
                .with("composition", composition)
                .with("kind", change)
                .with("proposal", &id),
        );
        for v in proposal.candidates.clone() {
            self.send(
                &v,
                MessageBody::MemberChangeProposal {
                    proposal: id.clone(),
                    composition: composition.clone(),
                    candidate: candidate.clone(),
                    change,
                },
            );
        }
        proposal.enter(Phase::Voting);
        self.proposals.insert(id.clone(), proposal);
        Ok(id)
    }

    /// Opens a merge vote. Every member of either composition votes; each
    /// composition then accepts by its own change threshold over its members.
    pub fn propose_merge(&mut self, now: Tick, a: &HolonId, b: &HolonId, into: Option<HolonId>) -> Result<ProposalId, HcfwError> {
        let ra = self.compositions.get(a).ok_or_else(|| HcfwError::UnknownComposition(a.clone()))?;
        let rb = self.compositions.get(b).ok_or_else(|| HcfwError::UnknownComposition(b.clone()))?;
        let voters: BTreeSet<HolonId> = ra.members.union(&rb.members).cloned().collect();
        let voting = ra.voting;
        let initiator = ra.members.iter().next().expect("members non-empty").clone();
        let into = match into {
            Some(id) => id,
            None => self.allocate_composition_id(),
        };
        let id = self.allocate_proposal_id();
        let mut proposal = Proposal {
            id: id.clone(),
            initiator,
            kind: ProposalKind::Merge { a: a.clone(), b: b.clone(), into: into.clone() },
            candidates: voters,
            rules: Vec::new(),
            voting,
            behaviours: BTreeSet::new(),
            phase: Phase::Coalition,
            phase_log: Vec::new(),
            votes: BTreeMap::new(),
            opened_at: now,
            secret: None,
        };
        proposal.enter(Phase::Coalition);
        self.record(
            TraceEvent::new(now, TraceKind::ProposalCreated)
                .with("a", a)
                .with("b", b)
                .with("composition", &into)
                .with("kind", "merge")
                .with("proposal", &id),
        );
        for v in proposal.candidates.clone() {
            self.send(&v, MessageBody::VoteRequest { proposal: id.clone() });
        }
        proposal.enter(Phase::Voting);
        self.proposals.insert(id.clone(), proposal);
        Ok(id)
    }

    pub fn cast_vote(&mut self, now: Tick, holon: &HolonId, proposal: &ProposalId, yes: bool) -> Result<(), HcfwError> {
        let p = self.proposals.get_mut(proposal).ok_or_else(|| HcfwError::UnknownProposal(proposal.clone()))?;
        if p.phase != Phase::Voting {
            return Err(HcfwError::WrongPhase { proposal: proposal.clone(), phase: p.phase });
        }
        if !p.candidates.contains(holon) {
            return Err(HcfwError::NotACandidate { holon: holon.clone(), proposal: proposal.clone() });
        }
        if p.votes.contains_key(holon) {
            return Err(HcfwError::AlreadyVoted { holon: holon.clone(), proposal: proposal.clone() });
        }
        p.votes.insert(holon.clone(), yes);
        self.record(
            TraceEvent::new(now, TraceKind::VoteCast)
                .with("holon", holon)
                .with("proposal", proposal)
                .with("vote", if yes { "yes" } else { "no" }),
        );
        Ok(())
    }

    /// All votes are in, or the timeout has passed.
    pub fn ready(&self, proposal: &ProposalId, now: Tick) -> bool {
        self.proposals
            .get(proposal)
            .is_some_and(|p| p.phase == Phase::Voting && (p.votes.len() == p.candidates.len() || now >= p.deadline()))
    }

    /// Closes voting. Missing votes count as no.
    pub fn finalize(&mut self, registry: &mut HolonRegistry, now: Tick, proposal: &ProposalId) -> Result<Outcome, HcfwError> {
        let p = self.proposals.get(proposal).ok_or_else(|| HcfwError::UnknownProposal(proposal.clone()))?;
        if p.phase != Phase::Voting {
            return Err(HcfwError::WrongPhase { proposal: proposal.clone(), phase: p.phase });
        }
        if !self.ready(proposal, now) {
            return Err(HcfwError::VotingOpen(proposal.clone()));
        }
        let p = p.clone();
        let yes = p.yes_voters();
        let outcome = match &p.kind {
            ProposalKind::Formation { composition } => self.finish_formation(registry, now, &p, composition, yes)?,
            ProposalKind::Change { composition, candidate, change } => {
                self.finish_change(registry, now, &p, composition, candidate, *change, yes)?
            }
            ProposalKind::Merge { a, b, into } => self.finish_merge(registry, now, &p, a, b, into, yes)?,
        };
        let accepted = match &outcome {
            Outcome::Rejected { .. } => false,
            Outcome::Changed { accepted, .. } => *accepted,
            _ => true,
        };
        let stored = self.proposals.get_mut(proposal).expect("checked above");
        stored.enter(if accepted { Phase::Finalized } else { Phase::Rejected });
        Ok(outcome)
    }

    fn finish_formation(
        &mut self,
        registry: &mut HolonRegistry,
        now: Tick,
        p: &Proposal,
        composition: &HolonId,
        yes: BTreeSet<HolonId>,
    ) -> Result<Outcome, HcfwError> {
        let secret = p.secret.expect("formation proposals carry a secret");
        if !threshold_met(yes.len(), p.candidates.len(), p.voting.formation_threshold) {
            self.crypto.destroy(secret);
            for c in &p.candidates {
                self.send(c, MessageBody::CompositionRejected { proposal: p.id.clone() });
            }
            self.record(
                TraceEvent::new(now, TraceKind::CompositionRejected)
                    .with("composition", composition)
                    .with("proposal", &p.id)
                    .with("voters", p.candidates.len())
                    .with("yes", yes.len()),
            );
            return Ok(Outcome::Rejected { proposal: p.id.clone(), yes: yes.len(), voters: p.candidates.len() });
        }
        registry.register_composition(composition, yes.iter().cloned().collect())?;
        let record = CompositionRecord {
            composition_id: composition.clone(),
            members: yes,
            composition_secret: secret,
            retired_secrets: Vec::new(),
            rules: p.rules.clone(),
            behaviours: p.behaviours.clone(),
            voting: p.voting,
            parents: Vec::new(),
        };
        self.distribute(&record, &p.id);
        self.record(
            TraceEvent::new(now, TraceKind::CompositionFinalized)
                .with("composition", composition)
                .with("members", join(&record.members))
                .with("proposal", &p.id)
                .with("secret", secret),
        );
        self.compositions.insert(composition.clone(), record.clone());
        Ok(Outcome::Formed(record))
    }

    fn distribute(&mut self, record: &CompositionRecord, proposal: &ProposalId) {
        for m in &record.members {
            self.crypto.grant(m, record.composition_secret);
            self.send(
                m,
                MessageBody::SecretDistribute {
                    composition: record.composition_id.clone(),
                    secret: record.composition_secret,
                },
            );
            self.send(
                m,
                MessageBody::CompositionFinalized {
                    proposal: proposal.clone(),
                    composition: record.composition_id.clone(),
                    members: record.members.clone(),
                    secret: record.composition_secret,
                },
            );
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish_change(
        &mut self,
        registry: &mut HolonRegistry,
        now: Tick,
        p: &Proposal,
        composition: &HolonId,
        candidate: &HolonId,
        change: ChangeKind,
        yes: BTreeSet<HolonId>,
    ) -> Result<Outcome, HcfwError> {
        let record = self.compositions.get(composition).ok_or_else(|| HcfwError::UnknownComposition(composition.clone()))?;
        let accepted = threshold_met(yes.len(), p.candidates.len(), record.voting.change_threshold);
        // Membership may have moved since the vote opened; re-check the change still applies.
        let applicable = match change {
            ChangeKind::Add => !record.members.contains(candidate),
            ChangeKind::Remove => record.members.contains(candidate) && record.members.len() > 1,
        };
        let accepted = accepted && applicable;
        let old_members = record.members.clone();
        let mut secret = None;
        if accepted {
            let mut members = old_members.clone();
            match change {
                ChangeKind::Add => members.insert(candidate.clone()),
                ChangeKind::Remove => members.remove(candidate),
            };
            secret = Some(self.rotate(registry, now, composition, members)?);
        }
        self.record(
            TraceEvent::new(now, TraceKind::MembershipChanged)
                .with("accepted", accepted)
                .with("candidate", candidate)
                .with("change", change)
                .with("composition", composition)
                .with("proposal", &p.id)
                .with("voters", p.candidates.len())
                .with("yes", yes.len()),
        );
        let mut notify = old_members;
        notify.insert(candidate.clone());
        for n in &notify {
            self.send(
                n,
                MessageBody::MemberChangeResult {
                    proposal: p.id.clone(),
                    composition: composition.clone(),
                    accepted,
                    secret,
                },
            );
        }
        Ok(Outcome::Changed { composition: composition.clone(), accepted })
    }

    /// Replaces the composition secret and grants the new one to `members` only.
    fn rotate(
        &mut self,
        registry: &mut HolonRegistry,
        now: Tick,
        composition: &HolonId,
        members: BTreeSet<HolonId>,
    ) -> Result<SecretId, HcfwError> {
        let secret = self.crypto.generate_secret();
        let record = self.compositions.get_mut(composition).ok_or_else(|| HcfwError::UnknownComposition(composition.clone()))?;
        let old = std::mem::replace(&mut record.composition_secret, secret);
        record.retired_secrets.push(old);
        record.members = members;
        let members = record.members.clone();
        registry.update_composition_members(composition, members.iter().cloned().collect());
        for m in &members {
            self.crypto.grant(m, secret);
            self.send(m, MessageBody::SecretDistribute { composition: composition.clone(), secret });
        }
        self.record(
            TraceEvent::new(now, TraceKind::SecretRotated)
                .with("composition", composition)
                .with("holders", join(&members))
                .with("previous", old)
                .with("secret", secret),
        );
        Ok(secret)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish_merge(
        &mut self,
        registry: &mut HolonRegistry,
        now: Tick,
        p: &Proposal,
        a: &HolonId,
        b: &HolonId,
        into: &HolonId,
        yes: BTreeSet<HolonId>,
    ) -> Result<Outcome, HcfwError> {
        let ra = self.compositions.get(a).ok_or_else(|| HcfwError::UnknownComposition(a.clone()))?.clone();
        let rb = self.compositions.get(b).ok_or_else(|| HcfwError::UnknownComposition(b.clone()))?.clone();
        let accepts = |r: &CompositionRecord| {
            let y = r.members.iter().filter(|m| yes.contains(*m)).count();
            threshold_met(y, r.members.len(), r.voting.change_threshold)
        };
        if !(accepts(&ra) && accepts(&rb)) {
            for c in &p.candidates {
                self.send(c, MessageBody::CompositionRejected { proposal: p.id.clone() });
            }
            self.record(
                TraceEvent::new(now, TraceKind::CompositionRejected)
                    .with("composition", into)
                    .with("proposal", &p.id)
                    .with("voters", p.candidates.len())
                    .with("yes", yes.len()),
            );
            return Ok(Outcome::Rejected { proposal: p.id.clone(), yes: yes.len(), voters: p.candidates.len() });
        }
        let record = merged_record(&ra, &rb, into.clone(), self.crypto.generate_secret());
        registry.register_composition(into, record.members.iter().cloned().collect())?;
        self.distribute(&record, &p.id);
        self.record(
            TraceEvent::new(now, TraceKind::CompositionFinalized)
                .with("composition", into)
                .with("members", join(&record.members))
                .with("parents", format!("{a},{b}"))
                .with("proposal", &p.id)
                .with("secret", record.composition_secret),
        );
        self.compositions.insert(into.clone(), record.clone());
        Ok(Outcome::Merged(record))
    }

    /// Convenience driver: casts the given votes (`None` abstains), then
    /// finalizes at the deadline if anyone abstained.
    pub fn decide(
        &mut self,
        registry: &mut HolonRegistry,
        now: Tick,
        proposal: &ProposalId,
        mut vote: impl FnMut(&HolonId) -> Option<bool>,
    ) -> Result<Outcome, HcfwError> {
        let p = self.proposals.get(proposal).ok_or_else(|| HcfwError::UnknownProposal(proposal.clone()))?;
        let voters: Vec<HolonId> = p.candidates.iter().cloned().collect();
        let deadline = p.deadline();
        for v in &voters {
            if let Some(yes) = vote(v) {
                self.cast_vote(now, v, proposal, yes)?;
            }
        }
        let at = if self.ready(proposal, now) { now } else { deadline };
        self.finalize(registry, at, proposal)
    }

    /// Member change with every member voting as `vote` says.
    pub fn member_change(
        &mut self,
        registry: &mut HolonRegistry,
        now: Tick,
        composition: &HolonId,
        candidate: &HolonId,
        change: ChangeKind,
        vote: impl FnMut(&HolonId) -> Option<bool>,
    ) -> Result<bool, HcfwError> {
        let id = self.propose_member_change(now, composition, candidate, change)?;
        match self.decide(registry, now, &id, vote)? {
            Outcome::Changed { accepted, .. } => Ok(accepted),
            _ => unreachable!("member change yields Changed"),
        }
    }

    pub fn merge_compositions(
        &mut self,
        registry: &mut HolonRegistry,
        now: Tick,
        a: &HolonId,
        b: &HolonId,
        vote: impl FnMut(&HolonId) -> Option<bool>,
    ) -> Result<CompositionRecord, HcfwError> {
        let id = self.propose_merge(now, a, b, None)?;
        match self.decide(registry, now, &id, vote)? {
            Outcome::Merged(record) => Ok(record),
            _ => Err(HcfwError::MergeRejected { a: a.clone(), b: b.clone() }),
        }
    }

    /// Evaluates the composition's membership rules against an optional
    /// triggering sensation. Invite actions open add proposals for every
    /// certified target.
    pub fn evaluate_membership_rules(
        &mut self,
        registry: &HolonRegistry,
        now: Tick,
        composition: &HolonId,
        event: Option<&Sensation>,
    ) -> Result<Vec<DiscoveryAction>, HcfwError> {
        let record = self.compositions.get(composition).ok_or_else(|| HcfwError::UnknownComposition(composition.clone()))?;
        let ctx = membership_context(registry, record, event, now);
        let mut actions = Vec::new();
        let rules = record.rules.clone();
        let members = record.members.clone();
        for (i, rule) in rules.iter().enumerate() {
            if !dsl::holds(&rule.condition, &ctx) {
                continue;
            }
            let targets: Vec<HolonId> = registry
                .iter()
                .filter(|h| !h.is_composition() && h.id != self.te)
                .filter(|h| match rule.action {
                    RuleAction::Exclude => members.contains(&h.id),
                    RuleAction::Discover | RuleAction::Invite => !members.contains(&h.id),
                })
                .filter(|h| rule.target_filter.matches_holon(h))
                .map(|h| h.id.clone())
                .collect();
            let mut proposals = Vec::new();
            if rule.action == RuleAction::Invite {
                for t in &targets {
                    if let Ok(id) = self.propose_member_change(now, composition, t, ChangeKind::Add) {
                        proposals.push(id);
                    }
                }
            }
            actions.push(DiscoveryAction { rule: i, action: rule.action, targets, proposals });
        }
        Ok(actions)
    }
}

/// Union of two records under a new id and secret. Rules keep `a`'s first.
pub fn merged_record(a: &CompositionRecord, b: &CompositionRecord, id: HolonId, secret: SecretId) -> CompositionRecord {
    let mut rules = a.rules.clone();
    for r in &b.rules {
        if !rules.contains(r) {
            rules.push(r.clone());
        }
    }
    let mut parents = vec![a.composition_id.clone(), b.composition_id.clone()];
    parents.sort();
    parents.dedup();
    CompositionRecord {
        composition_id: id,
        members: a.members.union(&b.members).cloned().collect(),
        composition_secret: secret,
        retired_secrets: Vec::new(),
        rules,
        behaviours: a.behaviours.union(&b.behaviours).cloned().collect(),
        voting: a.voting,
        parents,
    }
}

fn membership_context(
    registry: &HolonRegistry,
    record: &CompositionRecord,
    event: Option<&Sensation>,
    now: Tick,
) -> EvalContext {
    let mut ctx = EvalContext { now, ..EvalContext::default() };
    let members = record
        .members
        .iter()
        .filter_map(|m| registry.get(m).ok())
        .map(|h| {
            let mut row: BTreeMap<String, Value> = h.state.entries().clone();
            for (k, v) in &h.scores {
                row.insert(k.clone(), Value::Decimal(*v));
            }
            row.insert("id".into(), Value::Str(h.id.to_string()));
            row
        })
        .collect();
    ctx.collections.insert("members".into(), members);
    if let Ok(h) = registry.get(&record.composition_id) {
        ctx.shared = h.state.entries().clone();
    }
    if let Some(s) = event {
        ctx.locals.insert("sensation.kind".into(), Value::Str(s.kind.clone()));
        for (k, v) in &s.payload {
            ctx.locals.insert(format!("sensation.{k}"), v.clone());
        }
        ctx.events.push(LoggedEvent { kind: s.kind.clone(), at: s.timestamp });
    }
    ctx
}

fn join(ids: &BTreeSet<HolonId>) -> String {
    ids.iter().map(HolonId::as_str).collect::<Vec<_>>().join(",")
}
