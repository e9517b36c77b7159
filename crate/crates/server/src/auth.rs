//! Bearer tokens: one staff token from the environment, and per-session student
//! tokens derived from a server secret.

use axum::http::HeaderMap;
use rand::RngCore;
use sha2::{Digest, Sha256};

use crate::error::ApiError;

pub const STAFF_TOKEN_ENV: &str = "FLIPFEED_STAFF_TOKEN";
pub const TOKEN_SECRET_ENV: &str = "FLIPFEED_TOKEN_SECRET";

#[derive(Clone)]
pub struct Auth {
    staff_token: Option<String>,
    secret: Vec<u8>,
}

impl std::fmt::Debug for Auth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Auth").field("staff_token", &self.staff_token.as_ref().map(|_| "***")).finish()
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

impl Auth {
    pub fn new(staff_token: Option<String>, secret: Vec<u8>) -> Self {
        Auth { staff_token: staff_token.filter(|t| !t.is_empty()), secret }
    }

    /// Reads both secrets from the environment. Without a token secret, a random
    /// one is used and student tokens stop working across restarts.
    pub fn from_env() -> Self {
        let staff = std::env::var(STAFF_TOKEN_ENV).ok();
        if staff.is_none() {
            log::warn!("{STAFF_TOKEN_ENV} is not set; staff endpoints will reject every request");
        }
        let secret = match std::env::var(TOKEN_SECRET_ENV) {
            Ok(s) if !s.is_empty() => s.into_bytes(),
            _ => {
                log::warn!("{TOKEN_SECRET_ENV} is not set; student tokens will not survive a restart");
                let mut bytes = vec![0u8; 32];
                rand::rng().fill_bytes(&mut bytes);
                bytes
            }
        };
        Auth::new(staff, secret)
    }

    pub fn student_token(&self, session_id: &str) -> String {
        hex::encode(Sha256::new().chain_update(&self.secret).chain_update(session_id.as_bytes()).finalize())
    }

    fn bearer(headers: &HeaderMap) -> Option<&str> {
        headers.get("authorization")?.to_str().ok()?.strip_prefix("Bearer ")
    }

    fn is_staff_token(&self, token: &str) -> bool {
        self.staff_token.as_deref().is_some_and(|t| constant_time_eq(t.as_bytes(), token.as_bytes()))
    }

    pub fn require_staff(&self, headers: &HeaderMap) -> Result<(), ApiError> {
        match Self::bearer(headers) {
            Some(t) if self.is_staff_token(t) => Ok(()),
            _ => Err(ApiError::unauthorized()),
        }
    }

    /// Accepts the session's own token or the staff token.
    pub fn require_session(&self, headers: &HeaderMap, session_id: &str) -> Result<(), ApiError> {
        match Self::bearer(headers) {
            Some(t) if self.is_staff_token(t) => Ok(()),
            Some(t) if constant_time_eq(self.student_token(session_id).as_bytes(), t.as_bytes()) => Ok(()),
            _ => Err(ApiError::unauthorized()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn headers(token: &str) -> HeaderMap {
        let mut h = HeaderMap::new();
        h.insert("authorization", format!("Bearer {token}").parse().unwrap());
        h
    }

    #[test]
    fn student_tokens_are_session_scoped() {
        let auth = Auth::new(Some("staff".into()), b"secret".to_vec());
        let t = auth.student_token("s-1");
        assert!(auth.require_session(&headers(&t), "s-1").is_ok());
        assert!(auth.require_session(&headers(&t), "s-2").is_err());
        assert!(auth.require_staff(&headers(&t)).is_err());
        assert!(auth.require_session(&headers("staff"), "s-2").is_ok());
        assert!(auth.require_staff(&HeaderMap::new()).is_err());
    }

    #[test]
    fn unset_staff_token_rejects_everything() {
        let auth = Auth::new(Some(String::new()), b"k".to_vec());
        assert!(auth.require_staff(&headers("")).is_err());
    }
}
