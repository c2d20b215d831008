//! Holds the `acceptance` test target; run it with
//! `cargo test -p trialflow-acceptance --test acceptance`.
