fn main() -> std::process::ExitCode {
    kdlab::cli::main_entry()
}
