fn main() -> std::process::ExitCode {
    morphrl::cli::main()
}
