pub mod wire_case;
