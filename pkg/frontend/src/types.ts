/** Wire shapes of the gate API documents the console consumes. */

export interface ProbeDoc {
  sequence: number;
  site: string;
  at: number;
  checks: Record<string, [boolean, string]>;
  overall: boolean;
}

export interface SiteStatus {
  site: string;
  architecture: string;
  offline: boolean;
  degraded: boolean;
  latest_probe: ProbeDoc | null;
  tags: string[];
  installations: Record<string, string>;
}

export interface StatusDoc {
  seq: number;
  generated_at: number;
  sites: SiteStatus[];
}

export interface ManifestDoc {
  project: string;
  version: string;
  architectures: string[];
  state: string;
  manifest_digest: string;
  created_at: number;
  packages: unknown[];
}

export interface ReleasesDoc {
  seq: number;
  generation: number;
  releases: ManifestDoc[];
  announcements: { release: string; at: number }[];
}

export interface Ticket {
  ticket_id: string;
  origin: string;
  severity: string;
  state: string;
  retry_count: number;
  notes: string[];
}

export interface TicketsDoc {
  seq: number;
  tickets: Ticket[];
}

export interface JobDoc {
  job_id: string;
  site: string;
  project: string;
  version: string;
  action: string;
  submitter: string;
  queue: string;
  state: string;
  attempts: number;
  transitions: [string, string, number, string][];
}

export interface SubmitResponse {
  seq: number;
  job: JobDoc;
}

export interface HistoryDoc {
  seq: number;
  site: string;
  entries: ProbeDoc[];
}

export interface ErrorDoc {
  seq?: number;
  error: string;
  message?: string;
  job?: JobDoc;
}

/** Job states the gate can report in a matrix cell; REMOVED marks a completed removal. */
export const JOB_STATES = [
  "SUBMITTED",
  "AUTHORIZED",
  "INSTALLING",
  "INSTALLED",
  "VALIDATING",
  "VALIDATED",
  "PUBLISHED",
  "REJECTED",
  "INSTALL_FAILED",
  "VALIDATION_FAILED",
  "ABANDONED",
  "REMOVED",
] as const;

export const TICKET_STATES = ["OPEN", "RETRYING", "ESCALATED", "CLOSED"] as const;
export const TICKET_SEVERITIES = ["warning", "error", "critical"] as const;
