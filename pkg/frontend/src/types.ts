/** JSON shapes of the inference-service API. */

export interface CheckpointInfo {
  id: string;
  num_actions: number;
  height: number;
  width: number;
  train_step: number;
}

export interface SessionInfo {
  session_id: string;
  checkpoint: string;
  num_actions: number;
  step: number;
  /** base64-encoded PNG */
  frame: string;
}

export interface StepResult {
  session_id: string;
  step: number;
  frame: string;
}

export interface ApiErrorBody {
  error: { code: string; message: string };
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
  }
}
