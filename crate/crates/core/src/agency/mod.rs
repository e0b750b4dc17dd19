//! Supervised multi-agent layer: agent descriptors and capability
//! evaluation, the message protocol, the event-sourced supervisor state and
//! the supervisor that schedules agents over a session.

mod agents;
mod descriptor;
mod message;
mod state;
mod supervisor;

pub use agents::{
    ontology_knowledge, pack_knowledge, Agent, AgentContext, AutomatonAgent, CaseBasedAgent, EpidemiologyAgent,
    CASEBASE_KNOWLEDGE, EPIDEMIOLOGY_ATTRIBUTES,
};
pub use descriptor::{
    evaluate_capability, AgentDescriptor, AgentType, CapabilityAnswer, DeclineReason, DescriptorError, Goal,
    KnowledgeModel, ReflexiveProfile, Task, TaskNature, DEFAULT_ACCEPTANCE_THRESHOLD, DEFAULT_DEADLINE_MS,
};
pub use message::{
    AbandonReason, Draft, Info, LogEntry, Payload, Performative, Proposal, ProposalOrigin, StageFailure, BROADCAST,
    SUPERVISOR, USER,
};
pub use state::{
    parse_log, proposal_id, session_replay, task_id, AbandonCheck, AssignmentStatus, ProposalRecord, ProposalStatus,
    ReplayError, SessionStatus, StuckReport, SupervisorState, TaskRecord, TaskStatus,
};
pub use supervisor::{
    announce_task, AgencyError, Clock, Engine, EngineConfig, Journal, Scheduler, Supervisor, DEFAULT_MAX_ROUNDS,
};
