pub mod agency;
pub mod automaton;
pub mod casebase;
pub mod domain;
pub mod headless;
pub mod lint;
pub mod memory;
pub mod ontology;
pub mod service;
pub mod stage;
