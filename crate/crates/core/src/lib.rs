pub mod crypto;
pub mod encoding;
pub mod groupsig;
pub mod par;
pub mod protocol;
pub mod tolling;
pub mod io;
pub mod sim;
