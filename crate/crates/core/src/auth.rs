//! Scoped bearer tokens. Secret-split access and dataset registration need
//! admin scope; submissions need participant scope.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Scope {
    Admin,
    Participant,
}

/// A token as configured by the operator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessToken {
    pub token: String,
    pub scope: Scope,
    #[serde(default)]
    pub participant_id: Option<String>,
}

/// The authenticated caller behind a token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub scope: Scope,
    /// Participant id, or `admin` for admin tokens without one.
    pub id: String,
}

impl Principal {
    pub fn admin(id: impl Into<String>) -> Self {
        Self {
            scope: Scope::Admin,
            id: id.into(),
        }
    }

    pub fn participant(id: impl Into<String>) -> Self {
        Self {
            scope: Scope::Participant,
            id: id.into(),
        }
    }

    pub fn require_admin(&self) -> Result<()> {
        match self.scope {
            Scope::Admin => Ok(()),
            Scope::Participant => Err(Error::Unauthorized(format!(
                "`{}` lacks admin scope",
                self.id
            ))),
        }
    }

    pub fn require_participant(&self) -> Result<()> {
        match self.scope {
            Scope::Participant => Ok(()),
            Scope::Admin => Err(Error::Unauthorized("participant scope required".into())),
        }
    }

    pub fn is_admin(&self) -> bool {
        self.scope == Scope::Admin
    }
}

/// Token table.
#[derive(Clone, Debug, Default)]
pub struct Credentials {
    tokens: Vec<AccessToken>,
}

impl Credentials {
    pub fn new(tokens: Vec<AccessToken>) -> Result<Self> {
        for t in &tokens {
            if t.token.is_empty() {
                return Err(Error::invalid("empty token in configuration"));
            }
            if t.scope == Scope::Participant
                && t.participant_id.as_deref().map_or(true, str::is_empty)
            {
                return Err(Error::invalid("participant token without participant_id"));
            }
        }
        Ok(Self { tokens })
    }

    pub fn resolve(&self, token: &str) -> Option<Principal> {
        self.tokens
            .iter()
            .find(|t| t.token == token)
            .map(|t| Principal {
                scope: t.scope,
                id: t.participant_id.clone().unwrap_or_else(|| "admin".into()),
            })
    }
}
