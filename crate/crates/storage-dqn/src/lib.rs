//! Desk-scale toolkit for home battery dispatch under time-of-day tariffs.
//!
//! A reinforcement-learning agent (dueling double DQN with prioritized
//! experience replay, hand-rolled in plain `f64`) learns when to charge and
//! discharge a residential battery so that grid energy is bought in cheap
//! tariff slots and consumed in expensive ones. An exact dynamic-programming
//! oracle computes the optimal dispatch for the same model, so every trained
//! policy can be scored as a fraction of the best achievable savings.
//!
//! The guide under `book/` walks through each piece; its code snippets are
//! compiled as doc-tests so they cannot drift from the library.

pub mod agent;
pub mod analysis;
pub mod cli;
pub mod data;
pub mod environment;
mod error;
pub mod network;
pub mod oracle;
pub mod replay;
pub mod tariff;

pub use error::Error;

/// Shorthand used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

// Compile the guide's code snippets as doc-tests. Each chapter becomes an
// empty module whose documentation is the chapter source, so `cargo test`
// keeps the book honest.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(tariffs, "../../../book/src/tariffs.md");
    chapter!(environment, "../../../book/src/environment.md");
    chapter!(network, "../../../book/src/network.md");
    chapter!(replay, "../../../book/src/replay.md");
    chapter!(agent, "../../../book/src/agent.md");
    chapter!(oracle, "../../../book/src/oracle.md");
    chapter!(analysis, "../../../book/src/analysis.md");
    chapter!(cli, "../../../book/src/cli.md");
}

/// Keeps the README example compiling.
#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
mod readme {}
