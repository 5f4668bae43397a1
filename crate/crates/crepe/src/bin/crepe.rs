fn main() { crepe::cli::main(); }
