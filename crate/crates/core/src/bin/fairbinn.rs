fn main() -> std::process::ExitCode {
    fairbinn::cli::main()
}
