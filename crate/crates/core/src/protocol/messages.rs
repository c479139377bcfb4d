use serde::{Deserialize, Serialize};

use super::types::*;
use crate::encoding::{Encode, Encoder};
use crate::groupsig::GroupId;
use crate::tolling::{LocationRecord, SessionId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Setup,
    Driving,
    TollCalculation,
    DisputeResolving,
}

/// Envelope payloads. Only [`Message::Driving`] travels on the anonymous
/// channel and it carries no sender field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Message {
    RegisterKey(KeyRegistration),
    KeyCertificate(KeyCertificate),
    JoinRequest(JoinRequest),
    JoinResponse(Box<JoinResponse>),
    Driving(LocationRecord),
    FeeSetRequest { group: GroupId, sid: SessionId },
    FeeSet(PublishedFeeSet),
    Commitment(PaymentCommitment),
    Receipt(Receipt),
    DisputeBundle(DisputeBundle),
    DisputeResult(DisputeResult),
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::RegisterKey(_) => 0x01,
            Message::KeyCertificate(_) => 0x02,
            Message::JoinRequest(_) => 0x03,
            Message::JoinResponse(_) => 0x04,
            Message::Driving(_) => 0x10,
            Message::FeeSetRequest { .. } => 0x20,
            Message::FeeSet(_) => 0x21,
            Message::Commitment(_) => 0x22,
            Message::Receipt(_) => 0x23,
            Message::DisputeBundle(_) => 0x30,
            Message::DisputeResult(_) => 0x31,
        }
    }

    pub fn phase(&self) -> Phase {
        match self.tag() >> 4 {
            0 => Phase::Setup,
            1 => Phase::Driving,
            2 => Phase::TollCalculation,
            _ => Phase::DisputeResolving,
        }
    }

    /// Tag byte followed by the canonical encoding of the payload.
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        match self {
            Message::RegisterKey(m) => m.encode_into(&mut enc),
            Message::KeyCertificate(m) => m.encode_into(&mut enc),
            Message::JoinRequest(m) => m.encode_into(&mut enc),
            Message::JoinResponse(m) => m.encode_into(&mut enc),
            Message::Driving(m) => m.encode_into(&mut enc),
            Message::FeeSetRequest { group, sid } => {
                enc.field(group).field(sid);
            }
            Message::FeeSet(m) => m.encode_into(&mut enc),
            Message::Commitment(m) => m.encode_into(&mut enc),
            Message::Receipt(m) => m.encode_into(&mut enc),
            Message::DisputeBundle(m) => m.encode_into(&mut enc),
            Message::DisputeResult(m) => m.encode_into(&mut enc),
        }
        let mut out = Vec::with_capacity(1 + enc.as_bytes().len());
        out.push(self.tag());
        out.extend_from_slice(enc.as_bytes());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_map_to_phases() {
        let m = Message::FeeSetRequest { group: GroupId::new("G1"), sid: SessionId("s".into()) };
        assert_eq!(m.tag(), 0x20);
        assert_eq!(m.phase(), Phase::TollCalculation);
        let bytes = m.encode();
        assert_eq!(bytes[0], 0x20);
        assert_eq!(&bytes[1..5], &[0, 0, 0, 6]);
    }
}
